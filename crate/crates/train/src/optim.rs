//! Adaptive-moment optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.max_grad_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "bad optimizer settings: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            steps: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) -> Result<f64> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(TrainError::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        let c = &self.config;
        let norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
        let scale = if c.max_grad_norm > 0.0 && norm > c.max_grad_norm {
            (c.max_grad_norm / norm) as f32
        } else {
            1.0
        };
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let corr1 = 1.0 / (1.0 - c.beta1.powi(t)) as f32;
        let corr2 = 1.0 / (1.0 - c.beta2.powi(t)) as f32;
        let (lr, eps) = (c.lr as f32, c.eps as f32);
        for i in 0..params.len() {
            let g = grad[i] * scale;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= lr * (self.m[i] * corr1) / ((self.v[i] * corr2).sqrt() + eps);
        }
        Ok(norm)
    }
}
