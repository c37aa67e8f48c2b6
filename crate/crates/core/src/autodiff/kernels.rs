//! Raw numeric kernels behind the tape primitives. Everything here works on
//! flat row-major slices; shape validation happens in the tape layer.

use crate::error::{Error, Result};

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Accumulates `g[m×n] · bᵀ` into `ga[m×k]`.
pub fn matmul_grad_a(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, ga: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            ga[i * k + p] += dot(grow, brow);
        }
    }
}

/// Accumulates `aᵀ · g[m×n]` into `gb[k×n]`.
pub fn matmul_grad_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, gb: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geometry of one cross-correlation call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return Err(Error::shape("conv2d", input, kernel));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        let (h, w) = (input[2] + 2 * padding, input[3] + 2 * padding);
        let (kh, kw) = (kernel[2], kernel[3]);
        if kh > h || kw > w {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        if (h - kh) % stride != 0 || (w - kw) % stride != 0 {
            return Err(Error::Config(format!(
                "conv2d output size is not an integer: padded input {h}x{w}, kernel {kh}x{kw}, stride {stride}"
            )));
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            filters: kernel[0],
            kh,
            kw,
            stride,
            padding,
            out_h: (h - kh) / stride + 1,
            out_w: (w - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h, self.out_w]
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unrolls sample `n` into a `[C·kh·kw × out_h·out_w]` column matrix.
    fn im2col(&self, input: &[f64], n: usize, col: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        let pos = self.positions();
        let sample = &input[n * self.in_channels * h * w..(n + 1) * self.in_channels * h * w];
        for c in 0..self.in_channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * pos..(row + 1) * pos];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            dst[oy * self.out_w + ox] =
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                    0.0
                                } else {
                                    sample[(c * h + iy as usize) * w + ix as usize]
                                };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f64], n: usize, grad_input: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        let pos = self.positions();
        let sample =
            &mut grad_input[n * self.in_channels * h * w..(n + 1) * self.in_channels * h * w];
        for c in 0..self.in_channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * pos..(row + 1) * pos];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            sample[(c * h + iy as usize) * w + ix as usize] +=
                                src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let pos = g.positions();
    let mut col = vec![0.0; g.patch() * pos];
    let mut out = Vec::with_capacity(g.batch * g.filters * pos);
    for n in 0..g.batch {
        g.im2col(input, n, &mut col);
        let mut block = matmul(kernel, &col, g.filters, g.patch(), pos);
        for (f, chunk) in block.chunks_mut(pos).enumerate() {
            for v in chunk {
                *v += bias[f];
            }
        }
        out.extend_from_slice(&block);
    }
    out
}

/// Gradients requested from [`conv2d_backward`]; `None` slots are skipped.
pub struct ConvGrads<'a> {
    pub input: Option<&'a mut [f64]>,
    pub kernel: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    mut grads: ConvGrads<'_>,
) {
    let pos = g.positions();
    let patch = g.patch();
    let mut col = vec![0.0; patch * pos];
    for n in 0..g.batch {
        let gblock = &grad_out[n * g.filters * pos..(n + 1) * g.filters * pos];
        if let Some(gb) = grads.bias.as_deref_mut() {
            for (f, chunk) in gblock.chunks(pos).enumerate() {
                gb[f] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(gk) = grads.kernel.as_deref_mut() {
            g.im2col(input, n, &mut col);
            matmul_grad_a(gblock, &col, g.filters, patch, pos, gk);
        }
        if let Some(gi) = grads.input.as_deref_mut() {
            let mut dcol = vec![0.0; patch * pos];
            matmul_grad_b(kernel, gblock, g.filters, patch, pos, &mut dcol);
            g.col2im_add(&dcol, n, gi);
        }
    }
}

/// 2×2 stride-2 max pooling over `[N, C, H, W]`. Returns the pooled values and,
/// for each output, the flat input index that won (first row-major on ties).
pub fn max_pool2(shape: &[usize], input: &[f64]) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    if shape.len() != 4 {
        return Err(Error::shape("max_pool2", shape, &[0, 0, 0, 0]));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "max_pool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    Ok((vec![n, c, oh, ow], out, argmax))
}

/// Mean softmax cross-entropy over rows of `logits[N×K]`; also returns the
/// softmax probabilities for the backward pass.
pub fn softmax_cross_entropy(
    logits: &[f64],
    rows: usize,
    classes: usize,
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; rows * classes];
    let mut total = 0.0;
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        total += log_sum - z[labels[r]];
        for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(z) {
            *p = (v - log_sum).exp();
        }
    }
    (total / rows as f64, probs)
}
