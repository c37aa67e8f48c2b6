//! Small convolutional classifier whose activations are learnable convex
//! mixtures of ReLU, tanh and sin, trained with a phase schedule that
//! alternates between the backbone and the mixture weights.
//!
//! Everything runs on a small reverse-mode autodiff engine over `f64`
//! tensors ([`autodiff`]). The remaining modules build on it:
//!
//! - [`mixture`]: the mixed activation and its weights
//! - [`model`]: the two-conv CNN and its parameter groups
//! - [`optim`]: Adam with the non-negativity projection for mixture weights
//! - [`data`]: IDX image/label loading and seeded batching
//! - [`schedule`]: phased training, evaluation, checkpoints ([`checkpoint`])
//! - [`report`]: weight tables, activation curves, LeakyReLU fits
//! - [`cli`]: the `mixact` command line

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod mixture;
pub mod model;
pub mod optim;
pub mod report;
pub mod schedule;

pub use autodiff::{gradcheck, Tape, Tensor, Var};
pub use checkpoint::Checkpoint;
pub use data::{Dataset, DatasetName, Split};
pub use error::{Error, Result};
pub use mixture::{mixture_forward, Basis, MixtureWeights};
pub use model::{build_model, Group, Model, ModelConfig};
pub use optim::{AdamState, MomentPolicy};
pub use schedule::{evaluate, PhaseConfig, Schedule, TrainOptions, Trainer};
