use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tensor::DiffTensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// β1 = 0, β2 = 0.99, lr = 2e-3.
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        AdamConfig { lr, ..self }
    }
}

/// Moment accumulators for one parameter set.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[DiffTensor]) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn for_set(config: AdamConfig, params: &ParamSet) -> Self {
        AdamState::new(config, &params.tensors)
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.first[i]
    }

    /// One bias-corrected Adam update from the accumulated `grad` fields.
    /// Tensors with `requires_grad == false` are skipped.
    pub fn step(&mut self, params: &mut [DiffTensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.first.len()],
                actual: vec![params.len()],
            });
        }
        for (p, m) in params.iter().zip(&self.first) {
            if p.value.len() != m.len() || p.grad.len() != m.len() {
                return Err(Error::ShapeMismatch {
                    expected: vec![m.len()],
                    actual: p.shape().to_vec(),
                });
            }
            if p.requires_grad && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.requires_grad {
                continue;
            }
            let vals = p.value.data_mut();
            for i in 0..vals.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                vals[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_set(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step(&mut params.tensors)
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(params: &mut [DiffTensor], state: &mut AdamState) -> Result<()> {
    state.step(params)
}
