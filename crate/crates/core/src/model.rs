//! Two convolutional and two fully connected layers with a mixture
//! activation after conv1, conv2 and fc1:
//!
//! ```text
//! input [N,1,28,28]
//!   conv1 3×3 pad 1 → act1 → maxpool 2
//!   conv2 3×3 pad 1 → act2 → maxpool 2
//!   flatten → fc1 → act3 → fc2 → logits [N,10]
//! ```
//!
//! Parameters are split into two groups, `backbone` (conv/fc tensors) and
//! `mixture` (the three `w` vectors), which the training schedule freezes
//! and unfreezes independently.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mixture::{mixture_forward_on, Basis, MixtureWeights};

pub const IMAGE_SIDE: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Backbone,
    Mixture,
}

impl Group {
    pub fn complement(self) -> Group {
        match self {
            Group::Backbone => Group::Mixture,
            Group::Mixture => Group::Backbone,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Backbone => "backbone",
            Group::Mixture => "mixture",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(Group::Backbone),
            "mixture" => Ok(Group::Mixture),
            other => Err(Error::UnknownGroup(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Basis assigned to each slot of `w`.
    pub bases: [Basis; 3],
}

impl ModelConfig {
    /// 8 / 16 channels, 128 hidden units.
    pub fn standard() -> Self {
        Self {
            conv1_channels: 8,
            conv2_channels: 16,
            hidden: 128,
            classes: 10,
            bases: Basis::DEFAULT_ORDER,
        }
    }

    /// 2 / 4 channels, 16 hidden units; used for gradient checking.
    pub fn tiny() -> Self {
        Self {
            conv1_channels: 2,
            conv2_channels: 4,
            hidden: 16,
            classes: 10,
            bases: Basis::DEFAULT_ORDER,
        }
    }

    pub fn flat_features(&self) -> usize {
        self.conv2_channels * (IMAGE_SIDE / 4) * (IMAGE_SIDE / 4)
    }

    /// Name, group and shape of every parameter in canonical order.
    pub fn layout(&self) -> Vec<(&'static str, Group, Vec<usize>)> {
        let (c1, c2, h, k) = (
            self.conv1_channels,
            self.conv2_channels,
            self.hidden,
            self.classes,
        );
        vec![
            ("conv1.weight", Group::Backbone, vec![c1, 1, 3, 3]),
            ("conv1.bias", Group::Backbone, vec![c1]),
            ("conv2.weight", Group::Backbone, vec![c2, c1, 3, 3]),
            ("conv2.bias", Group::Backbone, vec![c2]),
            ("fc1.weight", Group::Backbone, vec![self.flat_features(), h]),
            ("fc1.bias", Group::Backbone, vec![h]),
            ("fc2.weight", Group::Backbone, vec![h, k]),
            ("fc2.bias", Group::Backbone, vec![k]),
            ("act1.w", Group::Mixture, vec![3]),
            ("act2.w", Group::Mixture, vec![3]),
            ("act3.w", Group::Mixture, vec![3]),
        ]
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC1_W: usize = 4;
const FC1_B: usize = 5;
const FC2_W: usize = 6;
const FC2_B: usize = 7;
const ACT: [usize; 3] = [8, 9, 10];

/// Names of the three activation layers, in network order.
pub const ACTIVATION_LAYERS: [&str; 3] = ["act1", "act2", "act3"];

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
}

/// Standard-size model with the given initialization seed.
pub fn build_model(seed: u64) -> Model {
    Model::new(ModelConfig::standard(), seed)
}

impl Model {
    /// Backbone weights are drawn from `U(−√(1/fan_in), √(1/fan_in))`,
    /// biases start at zero and every mixture `w` at `(1, 1, 1)`.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, group, shape)| {
                let n: usize = shape.iter().product();
                let data = if group == Group::Mixture {
                    vec![1.0; n]
                } else if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let fan_in = if shape.len() == 4 {
                        shape[1] * shape[2] * shape[3]
                    } else {
                        shape[0]
                    };
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Param {
                    name: name.to_string(),
                    group,
                    tensor: Tensor::new(&shape, data)
                        .expect("layout shape")
                        .with_grad(true),
                }
            })
            .collect();
        Self { config, params }
    }

    /// Rebuilds a model from named tensors, checking them against the layout.
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, group, shape), p) in layout.iter().zip(&params) {
            if p.name != *name || p.group != *group || p.tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match layout `{name}` {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Raw weights of activation layer `layer` (0, 1 or 2).
    pub fn mixture(&self, layer: usize) -> MixtureWeights {
        let t = &self.params[ACT[layer]].tensor;
        MixtureWeights::new(
            ACTIVATION_LAYERS[layer],
            [t.data()[0], t.data()[1], t.data()[2]],
        )
        .expect("stored mixture weights stay on the projected domain")
    }

    pub fn mixtures(&self) -> [MixtureWeights; 3] {
        [self.mixture(0), self.mixture(1), self.mixture(2)]
    }

    pub fn set_mixture(&mut self, layer: usize, w: &MixtureWeights) {
        self.params[ACT[layer]]
            .tensor
            .data_mut()
            .copy_from_slice(&w.raw());
    }

    /// Toggles `requires_grad` on every tensor of `group`.
    pub fn set_trainable(&mut self, group: &str, flag: bool) -> Result<()> {
        let group: Group = group.parse()?;
        self.set_group_trainable(group, flag);
        Ok(())
    }

    pub fn set_group_trainable(&mut self, group: Group, flag: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.tensor.requires_grad = flag;
        }
    }

    pub fn is_trainable(&self, group: Group) -> bool {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .all(|p| p.tensor.requires_grad)
    }

    /// Records the forward pass; returns the logits and the parameter
    /// variables in canonical order.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &Tensor) -> Result<(Var, Vec<Var>)> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone()))
            .collect();
        let input = tape.leaf(batch.clone().with_grad(false));
        let logits = forward_graph(&self.config, tape, &params, input)?;
        Ok((logits, params))
    }

    /// Logits for `batch` without keeping the tape around.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward_tape(&mut tape, batch)?;
        Ok(tape.value(logits).clone().with_grad(false))
    }

    /// Forward + cross-entropy + backward. Trainable parameters get their
    /// `grad` slot filled; frozen ones get `None`. Returns the batch loss.
    pub fn loss_and_grads(&mut self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let (logits, vars) = self.forward_tape(&mut tape, batch)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Ok(value);
        }
        tape.backward(loss)?;
        for (p, v) in self.params.iter_mut().zip(vars) {
            p.tensor.grad = if p.tensor.requires_grad {
                tape.grad(v).map(<[f64]>::to_vec)
            } else {
                None
            };
        }
        Ok(value)
    }
}

/// The network graph over externally supplied parameter variables, in the
/// order given by [`ModelConfig::layout`].
pub fn forward_graph(
    config: &ModelConfig,
    tape: &mut Tape,
    params: &[Var],
    input: Var,
) -> Result<Var> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != IMAGE_SIDE || shape[3] != IMAGE_SIDE {
        return Err(Error::shape(
            "model input",
            &shape,
            &[0, 1, IMAGE_SIDE, IMAGE_SIDE],
        ));
    }
    let n = shape[0];
    let p = |i: usize| params[i];

    let c1 = tape.conv2d(input, p(CONV1_W), p(CONV1_B), 1, 1)?;
    let a1 = mixture_forward_on(tape, c1, p(ACT[0]), config.bases)?;
    let m1 = tape.max_pool2(a1)?;

    let c2 = tape.conv2d(m1, p(CONV2_W), p(CONV2_B), 1, 1)?;
    let a2 = mixture_forward_on(tape, c2, p(ACT[1]), config.bases)?;
    let m2 = tape.max_pool2(a2)?;

    let flat = tape.reshape(m2, &[n, config.flat_features()])?;
    let h = tape.matmul(flat, p(FC1_W))?;
    let h = tape.add_bias(h, p(FC1_B))?;
    let a3 = mixture_forward_on(tape, h, p(ACT[2]), config.bases)?;

    let o = tape.matmul(a3, p(FC2_W))?;
    tape.add_bias(o, p(FC2_B))
}
