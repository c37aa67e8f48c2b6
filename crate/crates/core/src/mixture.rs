//! Learnable convex combination of ReLU, tanh and sin.
//!
//! Each activation layer owns raw weights `w = (w₁, w₂, w₃)`. On every
//! forward pass they are normalized to `Pᵢ = wᵢ / Σⱼ wⱼ` and the layer
//! computes `A(x) = P₁·relu(x) + P₂·tanh(x) + P₃·sin(x)`. The normalization
//! is recorded on the tape, so gradients reach `w` through the quotient.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Lower bound enforced on every raw weight after an optimizer step.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// One of the three fixed basis activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Relu,
    Tanh,
    Sin,
}

impl Basis {
    /// `[relu, tanh, sin]`: the slot order used for `w` and `P` everywhere.
    pub const DEFAULT_ORDER: [Basis; 3] = [Basis::Relu, Basis::Tanh, Basis::Sin];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Basis::Relu => x.max(0.0),
            Basis::Tanh => x.tanh(),
            Basis::Sin => x.sin(),
        }
    }

    pub fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Basis::Relu => tape.relu(x),
            Basis::Tanh => tape.tanh(x),
            Basis::Sin => tape.sin(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Basis::Relu => "relu",
            Basis::Tanh => "tanh",
            Basis::Sin => "sin",
        }
    }

    /// Whether the basis is bounded (tanh and sin are; relu is not).
    pub fn is_bounded(self) -> bool {
        !matches!(self, Basis::Relu)
    }

    pub fn from_code(code: u8) -> Option<Basis> {
        Basis::DEFAULT_ORDER.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        match self {
            Basis::Relu => 0,
            Basis::Tanh => 1,
            Basis::Sin => 2,
        }
    }
}

/// Evaluates basis `index` (1 = relu, 2 = tanh, 3 = sin) elementwise.
pub fn basis_eval(index: usize, x: &Tensor) -> Result<Tensor> {
    let basis = match index {
        1..=3 => Basis::DEFAULT_ORDER[index - 1],
        _ => {
            return Err(Error::Config(format!(
                "basis index {index} out of range 1..=3"
            )))
        }
    };
    let data = x.data().iter().map(|&v| basis.eval(v)).collect();
    Tensor::new(x.shape(), data)
}

/// Raw weights of one mixture activation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    layer: String,
    w: [f64; 3],
}

impl MixtureWeights {
    /// Accepts any finite, nonnegative `w` with a positive sum.
    pub fn new(layer: impl Into<String>, w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!(
                "mixture weights must be finite, nonnegative and not all zero, got {w:?}"
            )));
        }
        Ok(Self {
            layer: layer.into(),
            w,
        })
    }

    /// `w = (1, 1, 1)`, the initialization used for every layer.
    pub fn uniform(layer: impl Into<String>) -> Self {
        Self {
            layer: layer.into(),
            w: [1.0; 3],
        }
    }

    pub fn layer_name(&self) -> &str {
        &self.layer
    }

    pub fn raw(&self) -> [f64; 3] {
        self.w
    }

    pub fn normalize(&self) -> SimplexCoords {
        normalize_weights(self)
    }

    /// Clamps every weight to at least [`WEIGHT_FLOOR`].
    pub fn project_nonneg(&mut self) {
        project_floor(&mut self.w);
    }

    /// `A(x)` for a single input, using the default basis order.
    pub fn eval(&self, x: f64) -> f64 {
        let p = self.normalize().0;
        eval_with(&p, &Basis::DEFAULT_ORDER, x)
    }
}

pub(crate) fn project_floor(w: &mut [f64]) {
    for v in w {
        *v = v.max(WEIGHT_FLOOR);
    }
}

fn eval_with(p: &[f64; 3], bases: &[Basis; 3], x: f64) -> f64 {
    p[0] * bases[0].eval(x) + p[1] * bases[1].eval(x) + p[2] * bases[2].eval(x)
}

/// Normalized weights `P`, a point on the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexCoords(pub [f64; 3]);

impl SimplexCoords {
    pub fn p(&self) -> [f64; 3] {
        self.0
    }

    /// Slot with the largest coefficient (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}

pub fn normalize_weights(w: &MixtureWeights) -> SimplexCoords {
    let total: f64 = w.w.iter().sum();
    SimplexCoords(w.w.map(|v| v / total))
}

/// `A(x)` elementwise without recording anything.
pub fn mixture_forward(x: &Tensor, w: &MixtureWeights) -> Tensor {
    let p = normalize_weights(w).0;
    let data = x
        .data()
        .iter()
        .map(|&v| eval_with(&p, &Basis::DEFAULT_ORDER, v))
        .collect();
    Tensor::new(x.shape(), data).expect("same shape as input")
}

/// Records `A(x)` on the tape with `w` a 3-element tensor variable.
///
/// The normalization `w / Σw` is recorded as `sum`, `div` and `select`, so the
/// backward pass applies the quotient rule into `w`.
pub fn mixture_forward_on(tape: &mut Tape, x: Var, w: Var, bases: [Basis; 3]) -> Result<Var> {
    if tape.value(w).shape() != [3] {
        return Err(Error::shape("mixture weights", tape.value(w).shape(), &[3]));
    }
    let total = tape.sum(w);
    let p = tape.div(w, total)?;
    let mut acc: Option<Var> = None;
    for (i, basis) in bases.into_iter().enumerate() {
        let pi = tape.select(p, i)?;
        let fx = basis.record(tape, x);
        let term = tape.mul(pi, fx)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("three terms"))
}
