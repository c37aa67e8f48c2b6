use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{project_floor, MixtureWeights};
use crate::model::{Group, Param};

/// What happens to the moment estimates when a new phase starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentPolicy {
    /// Moments carry over; only the step counter restarts.
    #[default]
    Keep,
    /// Moments are zeroed along with the step counter.
    Reset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction, one pair of moment buffers per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub moments: Vec<Moments>,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &[Param]) -> Self {
        Self::with_sizes(params.iter().map(|p| p.tensor.len()))
    }

    pub fn with_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            t: 0,
            moments: sizes
                .into_iter()
                .map(|n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn begin_phase(&mut self, policy: MomentPolicy) {
        self.t = 0;
        if policy == MomentPolicy::Reset {
            for mo in &mut self.moments {
                mo.m.fill(0.0);
                mo.v.fill(0.0);
            }
        }
    }

    /// One Adam update over every trainable parameter; frozen parameters and
    /// their moments are left untouched. Mixture weights are projected onto
    /// `w ≥ 1e-6` afterwards.
    pub fn step(&mut self, params: &mut [Param], lr: f64) -> Result<()> {
        assert!(lr > 0.0, "learning rate must be positive");
        if params.len() != self.moments.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, model has {}",
                self.moments.len(),
                params.len()
            )));
        }
        if let Some(p) = params
            .iter()
            .find(|p| p.tensor.requires_grad && p.tensor.grad.is_none())
        {
            return Err(Error::MissingGrad(p.name.clone()));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (p, mo) in params.iter_mut().zip(&mut self.moments) {
            if !p.tensor.requires_grad {
                continue;
            }
            let grad = p.tensor.grad.take().expect("checked above");
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                mo.m[i] = self.beta1 * mo.m[i] + (1.0 - self.beta1) * g;
                mo.v[i] = self.beta2 * mo.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = mo.m[i] / bc1;
                let v_hat = mo.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if p.group == Group::Mixture {
                project_floor(data);
            }
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }
}

/// `wᵢ ← max(wᵢ, 1e-6)`.
pub fn project_nonneg(w: &mut MixtureWeights) {
    w.project_nonneg();
}
