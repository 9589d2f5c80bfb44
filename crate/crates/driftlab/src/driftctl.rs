//! Elastic Reset mechanics: EMA maintenance and the reset family.
//!
//! The elastic reset is two assignments every n steps: the online policy is
//! set to the EMA of itself, then the EMA is set back to the initial model.
//! `ResetToInit` and `ResetToEma` keep one assignment each and serve as
//! baselines. Resets touch the policy scope only; value-head entries are
//! never modified. The EMA lives in plain host memory and is never placed
//! on a tape.

use crate::error::Result;
use crate::optim::Adam;
use crate::seqpolicy::{ParamScope, ParamVector, SeqPolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicyKind {
    ElasticReset,
    ResetToInit,
    ResetToEma,
    None,
}

impl ResetPolicyKind {
    /// Event name used in reset logs and metric rows.
    pub fn event_name(self) -> Option<&'static str> {
        match self {
            ResetPolicyKind::ElasticReset => Some("elastic_reset"),
            ResetPolicyKind::ResetToInit => Some("reset_to_init"),
            ResetPolicyKind::ResetToEma => Some("reset_to_ema"),
            ResetPolicyKind::None => None,
        }
    }
}

/// One line of the reset event log.
pub fn reset_event_json(step: usize, kind: ResetPolicyKind) -> Option<String> {
    kind.event_name().map(|event| format!("{{\"step\": {step}, \"event\": \"{event}\"}}"))
}

/// EMA parameters θ̄ plus the initial snapshot θ₀ and the reset schedule.
///
/// Invariant: immediately after construction or after an elastic reset,
/// `theta_bar == theta_init` elementwise.
#[derive(Debug, Clone)]
pub struct EmaTracker {
    theta_bar: ParamVector,
    theta_init: ParamVector,
    eta: f64,
    reset_period: usize,
    steps_since_reset: usize,
    resets_done: usize,
}

impl EmaTracker {
    pub fn new(initial: ParamVector, eta: f64, reset_period: usize) -> Self {
        assert!(eta > 0.0 && eta < 1.0, "EMA decay must lie in (0,1), got {eta}");
        assert!(reset_period > 0, "reset period must be positive");
        EmaTracker {
            theta_bar: initial.clone(),
            theta_init: initial,
            eta,
            reset_period,
            steps_since_reset: 0,
            resets_done: 0,
        }
    }

    pub fn theta_bar(&self) -> &ParamVector {
        &self.theta_bar
    }

    pub fn theta_init(&self) -> &ParamVector {
        &self.theta_init
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn reset_period(&self) -> usize {
        self.reset_period
    }

    pub fn steps_since_reset(&self) -> usize {
        self.steps_since_reset
    }

    pub fn resets_done(&self) -> usize {
        self.resets_done
    }

    /// θ̄ ← (1−η)θ + ηθ̄, written as θ + η(θ̄−θ) so that θ̄ == θ is an exact
    /// fixed point. Increments the step counter.
    pub fn ema_update(&mut self, theta_online: &ParamVector) -> Result<()> {
        self.theta_bar.check_compatible(theta_online)?;
        for (bar, online) in self.theta_bar.values.iter_mut().zip(&theta_online.values) {
            *bar = online + self.eta * (*bar - online);
        }
        self.steps_since_reset += 1;
        Ok(())
    }

    /// Applies the reset if one is due (call once per training step, after
    /// `ema_update`). Returns the kind that fired, if any. Loads use the
    /// policy scope, so value-head entries stay bitwise untouched.
    pub fn maybe_reset(
        &mut self,
        policy: &mut SeqPolicy,
        kind: ResetPolicyKind,
    ) -> Result<Option<ResetPolicyKind>> {
        if kind == ResetPolicyKind::None || self.steps_since_reset < self.reset_period {
            return Ok(None);
        }
        match kind {
            ResetPolicyKind::ElasticReset => {
                policy.load_params(&self.theta_bar, ParamScope::PolicyOnly)?;
                self.theta_bar = self.theta_init.clone();
            }
            ResetPolicyKind::ResetToInit => {
                policy.load_params(&self.theta_init, ParamScope::PolicyOnly)?;
            }
            ResetPolicyKind::ResetToEma => {
                policy.load_params(&self.theta_bar, ParamScope::PolicyOnly)?;
            }
            ResetPolicyKind::None => unreachable!(),
        }
        self.steps_since_reset = 0;
        self.resets_done += 1;
        Ok(Some(kind))
    }
}

/// Clears optimizer moments for the given scope (the default at every
/// reset; an ablation flag in the trainer keeps them instead).
pub fn reset_optimizer_state(optimizer: &mut Adam, scope: ParamScope) {
    optimizer.reset_scope(scope);
}
