//! Adam with bias correction and an epoch-keyed step-decay learning rate.

use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { base_lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_factor: 0.1, decay_every_epochs: 15 }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.decay_every_epochs).unwrap_or(0);
        self.base_lr * self.decay_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub step: u64,
    pub epoch: usize,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.learnable().iter().map(|t| t.len()).collect();
        Self {
            config,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }
}

/// One Adam update of every learnable tensor.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    let grad_tensors = grads.tensors();
    {
        let tensors = params.learnable();
        if tensors.len() != grad_tensors.len() || tensors.len() != state.first.len() {
            return Err(Error::DimMismatch { expected: tensors.len(), found: grad_tensors.len() });
        }
        for ((p, g), m) in tensors.iter().zip(&grad_tensors).zip(&state.first) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::DimMismatch { expected: p.len(), found: g.len() });
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let lr = state.lr();
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (k, p) in params.learnable_mut().into_iter().enumerate() {
        let g = grad_tensors[k];
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        for i in 0..p.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    params.bump_generation();
    Ok(())
}
