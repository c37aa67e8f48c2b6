use super::kernels::{self, ConvGeom, ConvGrads};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Elementwise {
    Relu,
    Tanh,
    Sin,
    Scale(f64),
    Add(Var),
    Mul(Var),
    DivScalar(f64),
}

/// Reductions accepted by [`Tape::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    MaxOverWindow2x2,
}

/// Deliberate corruption of one backward rule, used as a negative control for
/// gradient checking.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SinBackwardScaled,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Tanh(Var),
    Sin(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Sum(Var),
    Mean(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Select(Var, usize),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Records primitive operations in execution order for reverse-mode
/// differentiation. Node inputs always refer to earlier nodes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Which side of every kink the recorded values fall on: one entry per
    /// ReLU input element (1 if positive) and the chosen index of every
    /// max-pool window. Two evaluations with equal patterns lie on the same
    /// smooth piece of the function.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => out.extend(
                    self.nodes[x.index()]
                        .value
                        .data()
                        .iter()
                        .map(|&v| usize::from(v > 0.0)),
                ),
                Op::MaxPool2 { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// gradients are propagated into it.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.grad = None;
        self.push(Op::Leaf, tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn output(&self, shape: &[usize], data: Vec<f64>, inputs: &[Var]) -> Tensor {
        let requires_grad = inputs.iter().any(|&v| self.needs_grad(v));
        Tensor::new(shape, data)
            .expect("kernel produced data matching its shape")
            .with_grad(requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = self.output(&[m, n], data, &[a, b]);
        Ok(self.push(Op::MatMul { a, b }, out))
    }

    /// Cross-correlation with zero padding and a per-filter bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
            padding,
        )?;
        if self.value(bias).shape() != [geom.filters] {
            return Err(Error::shape(
                "conv2d bias",
                self.value(bias).shape(),
                &[geom.filters],
            ));
        }
        let data = kernels::conv2d(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let out = self.output(&geom.out_shape(), data, &[input, kernel, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            out,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        let out = self.output(&shape, data, &[x]);
        self.push(op, out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn div_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v / s, Op::Scale(x, 1.0 / s))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Ok((ta.shape().to_vec(), data))
        } else if tb.is_scalar() {
            let y = tb.data()[0];
            Ok((
                ta.shape().to_vec(),
                ta.data().iter().map(|&x| f(x, y)).collect(),
            ))
        } else if ta.is_scalar() {
            let x = ta.data()[0];
            Ok((
                tb.shape().to_vec(),
                tb.data().iter().map(|&y| f(x, y)).collect(),
            ))
        } else {
            Err(Error::shape(op, ta.shape(), tb.shape()))
        }
    }

    /// Elementwise sum; either operand may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("add", a, b, |x, y| x + y)?;
        let out = self.output(&shape, data, &[a, b]);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("mul", a, b, |x, y| x * y)?;
        let out = self.output(&shape, data, &[a, b]);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("div", a, b, |x, y| x / y)?;
        let out = self.output(&shape, data, &[a, b]);
        Ok(self.push(Op::Div(a, b), out))
    }

    pub fn elementwise(&mut self, x: Var, primitive: Elementwise) -> Result<Var> {
        Ok(match primitive {
            Elementwise::Relu => self.relu(x),
            Elementwise::Tanh => self.tanh(x),
            Elementwise::Sin => self.sin(x),
            Elementwise::Scale(c) => self.scale(x, c),
            Elementwise::DivScalar(s) => self.div_scalar(x, s),
            Elementwise::Add(t) => self.add(x, t)?,
            Elementwise::Mul(t) => self.mul(x, t)?,
        })
    }

    /// Adds `bias[C]` along axis 1 of `x[N, C, ...]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() < 2 || tb.shape() != [tx.shape()[1]] {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let channels = tx.shape()[1];
        let inner: usize = tx.shape()[2..].iter().product();
        let b = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % channels])
            .collect();
        let shape = tx.shape().to_vec();
        let out = self.output(&shape, data, &[x, bias]);
        Ok(self.push(Op::AddBias { x, bias }, out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let out = self.output(&[], vec![s], &[x]);
        self.push(Op::Sum(x), out)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let out = self.output(&[], vec![s], &[x]);
        self.push(Op::Mean(x), out)
    }

    /// 2×2 stride-2 max pooling; ties route the gradient to the first
    /// element in row-major order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (shape, data, argmax) = kernels::max_pool2(t.shape(), t.data())?;
        let out = self.output(&shape, data, &[x]);
        Ok(self.push(Op::MaxPool2 { x, argmax }, out))
    }

    pub fn reduce(&mut self, x: Var, kind: Reduce) -> Result<Var> {
        match kind {
            Reduce::Sum => Ok(self.sum(x)),
            Reduce::Mean => Ok(self.mean(x)),
            Reduce::MaxOverWindow2x2 => self.max_pool2(x),
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::shape("reshape", t.shape(), shape));
        }
        let data = t.data().to_vec();
        let out = self.output(shape, data, &[x]);
        Ok(self.push(Op::Reshape(x), out))
    }

    /// Element `i` of a 1-D tensor as a scalar.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 1 || i >= t.len() {
            return Err(Error::shape("select", t.shape(), &[i]));
        }
        let v = t.data()[i];
        let out = self.output(&[], vec![v], &[x]);
        Ok(self.push(Op::Select(x, i), out))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                t.shape(),
                &[labels.len()],
            ));
        }
        let (rows, classes) = (t.shape()[0], t.shape()[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (loss, probs) = kernels::softmax_cross_entropy(t.data(), rows, classes, labels);
        let out = self.output(&[], vec![loss], &[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            out,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every node that requires a
    /// gradient and is reachable from `loss` gets its `grad` slot filled;
    /// gradients from multiple consumers add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NotScalar(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].value.requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = if node.value.requires_grad { g } else { None };
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
        if !self.needs_grad(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b } => {
                let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = self.slot(grads, a) {
                    kernels::matmul_grad_a(g, self.value(b).data(), m, k, n, ga);
                }
                if let Some(gb) = self.slot(grads, b) {
                    kernels::matmul_grad_b(self.value(a).data(), g, m, k, n, gb);
                }
            }
            &Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                // Detach the three slots so they can be borrowed mutably together.
                let mut gi = self.slot(grads, input).map(|s| s.to_vec());
                let mut gk = self.slot(grads, kernel).map(|s| s.to_vec());
                let mut gb = self.slot(grads, bias).map(|s| s.to_vec());
                kernels::conv2d_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    g,
                    ConvGrads {
                        input: gi.as_deref_mut(),
                        kernel: gk.as_deref_mut(),
                        bias: gb.as_deref_mut(),
                    },
                );
                for (v, d) in [(input, gi), (kernel, gk), (bias, gb)] {
                    if d.is_some() {
                        grads[v.0] = d;
                    }
                }
            }
            &Op::Relu(x) => {
                let xs = self.value(x).data();
                if let Some(gx) = self.slot(grads, x) {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xs) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            &Op::Tanh(x) => {
                let ys = node.value.data();
                if let Some(gx) = self.slot(grads, x) {
                    for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(ys) {
                        *o += gv * (1.0 - y * y);
                    }
                }
            }
            &Op::Sin(x) => {
                let scale = match self.fault {
                    Some(Fault::SinBackwardScaled) => 1.5,
                    None => 1.0,
                };
                let xs = self.value(x).data();
                if let Some(gx) = self.slot(grads, x) {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xs) {
                        *o += scale * gv * xv.cos();
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, x) {
                    for (o, &gv) in gx.iter_mut().zip(g) {
                        *o += c * gv;
                    }
                }
            }
            &Op::Add(a, b) => {
                self.accumulate_broadcast(grads, a, g, |gv, _| gv);
                self.accumulate_broadcast(grads, b, g, |gv, _| gv);
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.value(a).data(), self.value(b).data());
                self.accumulate_broadcast(grads, a, g, |gv, i| gv * pick(db, i));
                self.accumulate_broadcast(grads, b, g, |gv, i| gv * pick(da, i));
            }
            &Op::Div(a, b) => {
                let (da, db) = (self.value(a).data(), self.value(b).data());
                self.accumulate_broadcast(grads, a, g, |gv, i| gv / pick(db, i));
                self.accumulate_broadcast(grads, b, g, |gv, i| {
                    let y = pick(db, i);
                    -gv * pick(da, i) / (y * y)
                });
            }
            &Op::AddBias { x, bias } => {
                if let Some(gx) = self.slot(grads, x) {
                    for (o, &gv) in gx.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                let shape = self.value(x).shape();
                let channels = shape[1];
                let inner: usize = shape[2..].iter().product();
                if let Some(gb) = self.slot(grads, bias) {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[(i / inner) % channels] += gv;
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            &Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                if let Some(gx) = self.slot(grads, x) {
                    for o in gx.iter_mut() {
                        *o += g[0] / n;
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        gx[src] += gv;
                    }
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for (o, &gv) in gx.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
            &Op::Select(x, i) => {
                if let Some(gx) = self.slot(grads, x) {
                    gx[i] += g[0];
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let rows = labels.len();
                let classes = probs.len() / rows.max(1);
                if let Some(gx) = self.slot(grads, *logits) {
                    let scale = g[0] / rows as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gx[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `local(g[i], i)` into `v`, summing when `v` was broadcast
    /// as a scalar.
    fn accumulate_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        local: impl Fn(f64, usize) -> f64,
    ) {
        let broadcast = self.value(v).len() != g.len();
        if let Some(gv) = self.slot(grads, v) {
            if broadcast {
                gv[0] += g.iter().enumerate().map(|(i, &x)| local(x, i)).sum::<f64>();
            } else {
                for (i, (o, &x)) in gv.iter_mut().zip(g).enumerate() {
                    *o += local(x, i);
                }
            }
        }
    }
}

/// Reads `data[i]`, treating one-element data as broadcast.
fn pick(data: &[f64], i: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}
