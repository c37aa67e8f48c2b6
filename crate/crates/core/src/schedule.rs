//! Phase-based training: each phase trains one parameter group with Adam
//! while the other group stays frozen.
//!
//! The default plan has three phases:
//!
//! | phase | trains | lr | epochs |
//! |-------|--------|----|--------|
//! | 1 | backbone | 1e-3 | 10 |
//! | 2 | mixture | 1e-2 | 10 |
//! | 3 | backbone | 1e-3 | 10 |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::model::{Group, Model};
use crate::optim::{AdamState, MomentPolicy};
use crate::report::{weight_table, WeightRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub trainable: Group,
    pub lr: f64,
    pub epochs: usize,
}

impl PhaseConfig {
    pub fn new(trainable: Group, lr: f64, epochs: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if epochs == 0 {
            return Err(Error::Config("a phase needs at least one epoch".into()));
        }
        Ok(Self {
            trainable,
            lr,
            epochs,
        })
    }

    pub fn frozen(&self) -> Group {
        self.trainable.complement()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    phases: Vec<PhaseConfig>,
}

impl Schedule {
    pub fn new(phases: Vec<PhaseConfig>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("schedule has no phases".into()));
        }
        Ok(Self { phases })
    }

    /// Backbone (1e-3, 10) → mixture (1e-2, 10) → backbone (1e-3, 10).
    pub fn three_cycle() -> Self {
        Self {
            phases: vec![
                PhaseConfig {
                    trainable: Group::Backbone,
                    lr: 1e-3,
                    epochs: 10,
                },
                PhaseConfig {
                    trainable: Group::Mixture,
                    lr: 1e-2,
                    epochs: 10,
                },
                PhaseConfig {
                    trainable: Group::Backbone,
                    lr: 1e-3,
                    epochs: 10,
                },
            ],
        }
    }

    /// Multiplies every phase's epoch count by `factor`, rounding and
    /// keeping at least one epoch.
    pub fn scale_epochs(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!(
                "epoch scale must be positive, got {factor}"
            )));
        }
        Ok(Self {
            phases: self
                .phases
                .iter()
                .map(|p| PhaseConfig {
                    epochs: ((p.epochs as f64 * factor).round() as usize).max(1),
                    ..*p
                })
                .collect(),
        })
    }

    pub fn phases(&self) -> &[PhaseConfig] {
        &self.phases
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::three_cycle()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: usize,
    pub config: PhaseConfig,
    pub steps: usize,
    pub epochs: Vec<EpochMetrics>,
    pub wall_clock_secs: f64,
}

impl PhaseMetrics {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub batch_size: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub moment_policy: MomentPolicy,
    pub schedule: Schedule,
    pub phases: Vec<PhaseMetrics>,
    pub final_weights: Vec<WeightRow>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.phases.last().map_or(0.0, PhaseMetrics::final_accuracy)
    }

    /// Lines of `phase,epoch,split,metric,value`, header included.
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.phases)
    }
}

fn metrics_csv(phases: &[PhaseMetrics]) -> String {
    let mut s = String::from("phase,epoch,split,metric,value\n");
    for p in phases {
        for e in &p.epochs {
            writeln!(s, "{},{},train,loss,{}", p.phase, e.epoch, e.train_loss).unwrap();
            writeln!(
                s,
                "{},{},test,accuracy,{}",
                p.phase, e.epoch, e.test_accuracy
            )
            .unwrap();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub seed: u64,
    pub moment_policy: MomentPolicy,
    /// Where `metrics.csv` and `checkpoints/phase<k>.ckpt` go, if anywhere.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            seed: 0,
            moment_policy: MomentPolicy::Keep,
            out_dir: None,
        }
    }
}

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
pub fn evaluate(m: &Model, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    const CHUNK: usize = 250;
    let classes = m.config().classes;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..test.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let (images, labels) = test.gather(chunk);
        let logits = m.forward(&images)?;
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Owns the model and optimizer state for a sequence of phases.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub options: TrainOptions,
    phases_done: usize,
    epochs_done: u64,
    history: Vec<PhaseMetrics>,
}

impl Trainer {
    pub fn new(model: Model, options: TrainOptions) -> Self {
        let adam = AdamState::new(model.params());
        Self {
            model,
            adam,
            options,
            phases_done: 0,
            epochs_done: 0,
            history: Vec::new(),
        }
    }

    /// Resumes from a checkpoint written by [`Trainer::run_schedule`].
    pub fn from_checkpoint(ckpt: Checkpoint, mut options: TrainOptions) -> Self {
        options.seed = ckpt.seed;
        Self {
            model: ckpt.model,
            adam: ckpt.adam,
            options,
            phases_done: ckpt.phases_done as usize,
            epochs_done: ckpt.epochs_done,
            history: Vec::new(),
        }
    }

    pub fn phases_done(&self) -> usize {
        self.phases_done
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.options.seed,
            phases_done: self.phases_done as u32,
            epochs_done: self.epochs_done,
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Trains `phase.trainable` for `phase.epochs` epochs with the other group
    /// frozen, evaluating on `test` after every epoch.
    pub fn run_phase(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        phase: &PhaseConfig,
    ) -> Result<PhaseMetrics> {
        let index = self.phases_done + 1;
        let started = Instant::now();
        self.model.set_group_trainable(phase.trainable, true);
        self.model.set_group_trainable(phase.frozen(), false);
        self.adam.begin_phase(self.options.moment_policy);

        let mut steps = 0;
        let mut epochs = Vec::with_capacity(phase.epochs);
        for epoch in 1..=phase.epochs {
            let batches = epoch_batches(
                train.len(),
                self.options.batch_size,
                self.options.seed,
                self.epochs_done,
            );
            let mut loss_sum = 0.0;
            for (b, indices) in batches.iter().enumerate() {
                let (images, labels) = train.gather(indices);
                let loss = self.model.loss_and_grads(&images, &labels)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("loss at phase {index}, epoch {epoch}, batch {b}: {loss}"),
                    });
                }
                self.adam.step(self.model.params_mut(), phase.lr)?;
                loss_sum += loss;
                steps += 1;
            }
            self.epochs_done += 1;
            epochs.push(EpochMetrics {
                epoch,
                train_loss: loss_sum / batches.len().max(1) as f64,
                test_accuracy: evaluate(&self.model, test)?,
            });
        }
        for p in self.model.params_mut() {
            p.tensor.grad = None;
        }
        self.phases_done = index;
        let metrics = PhaseMetrics {
            phase: index,
            config: *phase,
            steps,
            epochs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs the phases of `schedule` not yet done (all of them for a fresh
    /// trainer, the remainder after [`Trainer::from_checkpoint`]). With an
    /// output directory set, rewrites `metrics.csv` and writes
    /// `checkpoints/phase<k>.ckpt` after each phase.
    pub fn run_schedule(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        schedule: &Schedule,
    ) -> Result<TrainReport> {
        let first = self.history.len();
        for phase in schedule.phases().iter().skip(self.phases_done) {
            let metrics = self.run_phase(train, test, phase)?;
            if let Some(dir) = &self.options.out_dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("metrics.csv"), metrics_csv(&self.history[first..]))?;
                self.checkpoint()
                    .save(checkpoint_path(dir, metrics.phase))?;
            }
        }
        Ok(TrainReport {
            seed: self.options.seed,
            batch_size: self.options.batch_size,
            train_samples: train.len(),
            test_samples: test.len(),
            moment_policy: self.options.moment_policy,
            schedule: schedule.clone(),
            phases: self.history[first..].to_vec(),
            final_weights: weight_table(&self.model),
        })
    }
}

pub fn checkpoint_path(out_dir: &Path, phase: usize) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("phase{phase}.ckpt"))
}
