//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's kernels.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mixact::model::Model;
use rand::Rng;

/// `[m, k] × [k, n]` with the textbook triple loop.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Cross-correlation of `[n, c, h, w]` with `[f, c, kh, kw]`, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
    (n, c, h, w): (usize, usize, usize, usize),
    (f, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[o]);
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (x * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let kv = kernel[((o * c + ch) * kh + dy) * kw + dx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Mean of `log Σ exp(z) − z_label`, computed with the log-sum-exp shift.
pub fn direct_cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let rows = labels.len();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let z = &logits[r * classes..(r + 1) * classes];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[label];
    }
    total / rows as f64
}

fn max_pool2(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x[plane * h * w + (2 * y + dy) * w + 2 * xx + dx];
                out[plane * oh * ow + y * ow + xx] =
                    at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    out
}

/// The classifier with every activation replaced by plain ReLU, written out
/// loop by loop from the model's parameter tensors.
pub fn relu_reference_forward(model: &Model, images: &[f64], n: usize) -> Vec<f64> {
    let cfg = model.config();
    let get = |name: &str| model.param(name).expect("parameter").tensor.data().to_vec();
    let relu = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = x.max(0.0));

    let (mut a, _, _) = naive_conv2d(
        images,
        &get("conv1.weight"),
        Some(&get("conv1.bias")),
        (n, 1, 28, 28),
        (cfg.conv1_channels, 3, 3),
        1,
        1,
    );
    relu(&mut a);
    let a = max_pool2(&a, n, cfg.conv1_channels, 28, 28);
    let (mut b, _, _) = naive_conv2d(
        &a,
        &get("conv2.weight"),
        Some(&get("conv2.bias")),
        (n, cfg.conv1_channels, 14, 14),
        (cfg.conv2_channels, 3, 3),
        1,
        1,
    );
    relu(&mut b);
    let flat = max_pool2(&b, n, cfg.conv2_channels, 14, 14);
    let features = cfg.conv2_channels * 49;

    let mut hidden = naive_matmul(&flat, &get("fc1.weight"), n, features, cfg.hidden);
    let b1 = get("fc1.bias");
    for (i, v) in hidden.iter_mut().enumerate() {
        *v += b1[i % cfg.hidden];
    }
    relu(&mut hidden);
    let mut logits = naive_matmul(&hidden, &get("fc2.weight"), n, cfg.hidden, cfg.classes);
    let b2 = get("fc2.bias");
    for (i, v) in logits.iter_mut().enumerate() {
        *v += b2[i % cfg.classes];
    }
    logits
}

/// Minimal IDX reader: big-endian magic and dims, then raw bytes.
pub fn parse_idx(bytes: &[u8]) -> (Vec<usize>, &[u8]) {
    assert_eq!(&bytes[..2], &[0, 0]);
    assert_eq!(bytes[2], 0x08, "ubyte payload");
    let ndim = bytes[3] as usize;
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    (dims, &bytes[4 + 4 * ndim..])
}

/// One published weight-table row: dataset, layer, (P1, P2, P3).
#[derive(Debug, Clone)]
pub struct PublishedRow {
    pub dataset: String,
    pub layer: String,
    pub p: [f64; 3],
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn published_rows() -> Vec<PublishedRow> {
    let text = std::fs::read_to_string(fixture_path("published_weights.csv")).expect("fixture");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("dataset,layer,p1,p2,p3"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 5, "{l}");
            PublishedRow {
                dataset: f[0].to_string(),
                layer: f[1].to_string(),
                p: [
                    f[2].parse().unwrap(),
                    f[3].parse().unwrap(),
                    f[4].parse().unwrap(),
                ],
            }
        })
        .collect()
}

/// Directory holding `mnist/` etc. `MIXACT_DATA_ROOT` overrides the
/// repository's `data/`.
pub fn data_root() -> PathBuf {
    std::env::var_os("MIXACT_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
