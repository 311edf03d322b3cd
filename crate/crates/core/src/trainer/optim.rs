use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f32,
    },
    /// Adam-style second-moment scaling without a first moment, with
    /// decoupled weight decay.
    AdamW {
        lr: f32,
        beta2: f32,
        eps: f32,
        weight_decay: f32,
    },
}

impl OptimizerConfig {
    pub fn lr(&self) -> f32 {
        match self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::AdamW { lr, .. } => *lr,
        }
    }
}

/// Optimizer state over the flat parameter vector. Each rank only touches
/// the ranges of the shards it owns.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    second: Vec<f32>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let second = match config {
            OptimizerConfig::Sgd { .. } => Vec::new(),
            OptimizerConfig::AdamW { .. } => vec![0.0; len],
        };
        Self { config, second }
    }

    /// Updates `params` (the slice starting at flat `offset`) in place.
    /// `step` counts from 1.
    pub fn apply(&mut self, step: u64, offset: usize, params: &mut [f32], grads: &[f32]) {
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::AdamW {
                lr,
                beta2,
                eps,
                weight_decay,
            } => {
                let correction = 1.0 - beta2.powi(step.min(i32::MAX as u64) as i32);
                let v = &mut self.second[offset..offset + params.len()];
                for ((p, g), v) in params.iter_mut().zip(grads).zip(v) {
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let denom = (*v / correction).sqrt() + eps;
                    *p -= lr * (g / denom + weight_decay * *p);
                }
            }
        }
    }
}
