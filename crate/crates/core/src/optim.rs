//! Parameter updates: bias-corrected Adam, plain SGD, and the two-phase
//! Adam-then-SGD option.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    /// First-moment decay; the conventional "momentum" knob.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Which update rule the trainer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    /// Adam for the first `switch_iteration` steps, plain SGD afterwards.
    AdamThenSgd { switch_iteration: u64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam
    }
}

/// Per-parameter first/second moment buffers plus the shared step count.
pub struct OptimState<E: Element> {
    pub config: AdamConfig,
    pub kind: OptimizerKind,
    pub step: u64,
    moments: Vec<(Vec<E>, Vec<E>)>,
}

impl<E: Element> OptimState<E> {
    pub fn new(config: AdamConfig, kind: OptimizerKind, params: &[Parameter<E>]) -> Self {
        let moments = params
            .iter()
            .map(|p| (vec![E::zero(); p.tensor.numel()], vec![E::zero(); p.tensor.numel()]))
            .collect();
        OptimState { config, kind, step: 0, moments }
    }

    /// Apply one update from the gradients accumulated on `params` (which
    /// must be the same list, in the same order, the state was built from).
    pub fn step(&mut self, params: &[Parameter<E>]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::InvalidArg(format!(
                "optimizer state holds {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let use_adam = match self.kind {
            OptimizerKind::Adam => true,
            OptimizerKind::Sgd => false,
            OptimizerKind::AdamThenSgd { switch_iteration } => self.step <= switch_iteration,
        };

        let lr = E::of_f64(self.config.lr);
        let b1 = E::of_f64(self.config.beta1);
        let b2 = E::of_f64(self.config.beta2);
        let eps = E::of_f64(self.config.epsilon);
        let bias1 = E::of_f64(1.0 - self.config.beta1.powi(self.step as i32));
        let bias2 = E::of_f64(1.0 - self.config.beta2.powi(self.step as i32));
        let one = E::one();

        for (p, (m, v)) in params.iter().zip(&mut self.moments) {
            let grad = p.tensor.grad().ok_or_else(|| {
                Error::InvalidArg(format!("parameter `{}` has no gradient; run backward first", p.name))
            })?;
            if grad.len() != m.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}`: moment buffers of {} elements vs gradient of {}",
                    p.name,
                    m.len(),
                    grad.len()
                )));
            }
            p.tensor.with_data_mut(|data| {
                if use_adam {
                    for i in 0..data.len() {
                        let g = grad[i];
                        m[i] = b1 * m[i] + (one - b1) * g;
                        v[i] = b2 * v[i] + (one - b2) * g * g;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                } else {
                    for i in 0..data.len() {
                        data[i] = data[i] - lr * grad[i];
                    }
                }
            });
        }
        Ok(())
    }

    /// Moment buffers for checkpointing, aligned with the parameter list.
    pub fn moments(&self) -> &[(Vec<E>, Vec<E>)] {
        &self.moments
    }

    /// Restore moments and step count (shapes must match the current list).
    pub fn restore(&mut self, step: u64, moments: Vec<(Vec<E>, Vec<E>)>) -> Result<()> {
        if moments.len() != self.moments.len()
            || moments
                .iter()
                .zip(&self.moments)
                .any(|(a, b)| a.0.len() != b.0.len() || a.1.len() != b.1.len())
        {
            return Err(Error::InvalidArg(
                "optimizer moments do not match the current parameter list".into(),
            ));
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }
}
