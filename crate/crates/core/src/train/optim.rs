use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, Params};

pub const WARMUP_FRACTION: f64 = 0.02;
pub const CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(model: &ModelConfig, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: Params::zeros(model),
            v: Params::zeros(model),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let g = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, (_, _, g)), m), v) in params.tensors_mut().into_iter().zip(g).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Linear warmup over the first 2% of steps (at least one), then linear
/// decay to zero at `total`.
pub fn learning_rate(base: f64, step: usize, total: usize) -> f64 {
    let warmup = ((total as f64 * WARMUP_FRACTION).ceil() as usize).max(1);
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        base * (total - step) as f64 / (total - warmup) as f64
    } else {
        base
    }
}

/// Rescales `grads` to norm `max_norm` when it is larger; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
