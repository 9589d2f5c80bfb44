//! Adam over flat parameter vectors, with per-scope moment state so the
//! policy-scope accumulators can be cleared at a reset without touching the
//! value-scope ones.

use crate::seqpolicy::{ParamLayout, ParamScope};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    /// true at indices in the policy scope, false in the value scope
    policy_mask: Vec<bool>,
    step_policy: u64,
    step_value: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, layout: &ParamLayout) -> Self {
        let n = layout.total_len();
        let mut policy_mask = vec![false; n];
        for i in layout.scope_indices(ParamScope::PolicyOnly) {
            policy_mask[i] = true;
        }
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], policy_mask, step_policy: 0, step_value: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One update in place. Bias correction uses the per-scope step count.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.step_policy += 1;
        self.step_value += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        for i in 0..params.len() {
            let t = if self.policy_mask[i] { self.step_policy } else { self.step_value };
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - b1.powi(t as i32));
            let v_hat = self.v[i] / (1.0 - b2.powi(t as i32));
            params[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
    }

    /// Clears first/second-moment accumulators and the bias-correction step
    /// counter for the given scope.
    pub fn reset_scope(&mut self, scope: ParamScope) {
        for i in 0..self.m.len() {
            let in_scope = match scope {
                ParamScope::All => true,
                ParamScope::PolicyOnly => self.policy_mask[i],
                ParamScope::ValueOnly => !self.policy_mask[i],
            };
            if in_scope {
                self.m[i] = 0.0;
                self.v[i] = 0.0;
            }
        }
        match scope {
            ParamScope::All => {
                self.step_policy = 0;
                self.step_value = 0;
            }
            ParamScope::PolicyOnly => self.step_policy = 0,
            ParamScope::ValueOnly => self.step_value = 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
