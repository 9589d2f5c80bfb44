//! Rollout record: tokens, log-probs, values, rewards, advantages.

use crate::error::{Error, Result};

pub type Token = usize;

/// End-of-sequence token, index 0 by convention.
pub const EOS: Token = 0;

/// One sampled episode. All per-token arrays share the response length;
/// log-probability entries are never positive.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    /// log π_θ(y_t | x, y_<t) under the policy that sampled the response.
    pub logp_online: Vec<f64>,
    /// log π_ref(y_t | x, y_<t) under the frozen reference (initial) policy.
    pub logp_ref: Vec<f64>,
    /// Value estimates for the states the response tokens were emitted from.
    pub values: Vec<f64>,
    pub reward_terminal: f64,
    pub shaped_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Per-sequence sum of online/reference log-ratios (the empirical KL
    /// contribution of this sample).
    pub fn log_ratio_sum(&self) -> f64 {
        self.logp_online.iter().zip(&self.logp_ref).map(|(o, r)| o - r).sum()
    }

    /// Checks the shared-length and sign invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.response.len();
        let per_token: [(&str, usize); 4] = [
            ("logp_online", self.logp_online.len()),
            ("logp_ref", self.logp_ref.len()),
            ("values", self.values.len()),
            ("shaped_rewards", self.shaped_rewards.len()),
        ];
        for (name, len) in per_token {
            if len != 0 && len != n {
                return Err(Error::LengthMismatch(format!(
                    "{name} has {len} entries for a response of {n} tokens"
                )));
            }
        }
        if !self.advantages.is_empty() && self.advantages.len() != n {
            return Err(Error::LengthMismatch(format!(
                "advantages has {} entries for a response of {n} tokens",
                self.advantages.len()
            )));
        }
        if self.logp_online.iter().chain(&self.logp_ref).any(|lp| *lp > 0.0) {
            return Err(Error::NonFinite("positive log-probability".into()));
        }
        Ok(())
    }
}
