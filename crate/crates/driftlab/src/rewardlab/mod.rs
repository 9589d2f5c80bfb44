//! Reward production and shaping: KL-shaped rewards, the adaptive KL
//! coefficient controller, pairwise preference losses, and trainable
//! reward models.

mod model;

pub use model::{
    train_reward_model, LabeledSeq, PreferencePair, RewardDataset, RewardKind, RewardModel,
    RewardModelConfig, RewardTrainReport,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// KL coefficient defaults wired as presets. The pivot task pairs a strong
/// penalty with its KL-only arm and a minimal one with elastic reset; the
/// continuation task uses 0.1 / 0.001 the same way; preference-reward
/// pipelines default to 0.02.
pub mod beta_presets {
    pub const PIVOT_KL: f64 = 0.05;
    pub const MINIMAL: f64 = 0.001;
    pub const CONTINUATION_KL: f64 = 0.1;
    pub const PREFERENCE: f64 = 0.02;
}

/// Per-token shaped rewards: every token gets the -β·(log π_θ − log π_ref)
/// penalty, the task reward lands on the terminal token. Summing over the
/// sequence gives exactly r − β·Σ log-ratio.
pub fn shape_reward(
    reward: f64,
    logp_online: &[f64],
    logp_ref: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    if logp_online.len() != logp_ref.len() {
        return Err(Error::LengthMismatch(format!(
            "logp_online has {} entries, logp_ref has {}",
            logp_online.len(),
            logp_ref.len()
        )));
    }
    if logp_online.is_empty() {
        return Err(Error::LengthMismatch("cannot shape rewards for an empty response".into()));
    }
    debug_assert!(beta >= 0.0);
    let mut shaped: Vec<f64> =
        logp_online.iter().zip(logp_ref).map(|(o, r)| -beta * (o - r)).collect();
    *shaped.last_mut().unwrap() += reward;
    Ok(shaped)
}

/// Proportional controller for the KL coefficient β. With `adaptive` off
/// (or zero gain) updates are the identity; β is clamped at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlController {
    pub beta: f64,
    pub target_kl: f64,
    pub gain: f64,
    pub adaptive: bool,
}

impl KlController {
    pub fn fixed(beta: f64) -> Self {
        KlController { beta, target_kl: 1.0, gain: 0.0, adaptive: false }
    }

    pub fn adaptive(beta: f64, target_kl: f64) -> Self {
        assert!(target_kl > 0.0);
        KlController { beta, target_kl, gain: 0.1, adaptive: true }
    }

    /// β ← β·(1 + gain·e) with e = clip((observed − target)/target, ±0.2).
    pub fn adaptive_beta_update(&mut self, observed_mean_kl: f64) -> f64 {
        debug_assert!(observed_mean_kl >= 0.0);
        if self.adaptive {
            let e = ((observed_mean_kl - self.target_kl) / self.target_kl).clamp(-0.2, 0.2);
            self.beta *= 1.0 + self.gain * e;
            if self.beta < 0.0 {
                self.beta = 0.0;
            }
        }
        self.beta
    }
}

/// Negative log-likelihood of the preferred response under the
/// Bradley-Terry model: -ln σ(r₊ − r₋), computed as softplus(-(r₊ − r₋)).
pub fn preference_loss(r_plus: f64, r_minus: f64) -> f64 {
    softplus(-(r_plus - r_minus))
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// score = log₂(1 + upvotes); negative counts are rejected.
pub fn upvote_score(upvotes: i64) -> Result<f64> {
    if upvotes < 0 {
        return Err(Error::config("upvotes", format!("must be non-negative, got {upvotes}")));
    }
    Ok((1.0 + upvotes as f64).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::finite_diff_grad;

    #[test]
    fn identical_policies_shape_to_terminal_reward_only() {
        let lp = vec![-0.5, -1.0, -0.25];
        let shaped = shape_reward(1.0, &lp, &lp, 0.1).unwrap();
        assert_eq!(shaped, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn shaped_total_matches_penalized_reward() {
        let online = vec![-0.2, -0.9, -0.4];
        let reference = vec![-0.7, -0.6, -0.8];
        let shaped = shape_reward(0.5, &online, &reference, 0.1).unwrap();
        let total: f64 = shaped.iter().sum();
        let log_ratio: f64 = online.iter().zip(&reference).map(|(o, r)| o - r).sum();
        assert!((total - (0.5 - 0.1 * log_ratio)).abs() < 1e-12);
        // Worked instance: Σ log-ratio 2.0, β 0.1, r 0.5 → total 0.3.
        let online2 = vec![-1.0, -1.0];
        let ref2 = vec![-2.0, -2.0];
        let shaped2 = shape_reward(0.5, &online2, &ref2, 0.1).unwrap();
        assert!((shaped2.iter().sum::<f64>() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_is_the_identity_on_task_reward() {
        let online = vec![-0.2, -3.0];
        let reference = vec![-1.5, -0.1];
        let shaped = shape_reward(0.75, &online, &reference, 0.0).unwrap();
        assert_eq!(shaped, vec![0.0, 0.75]);
    }

    #[test]
    fn shaping_rejects_mismatched_lengths() {
        assert!(shape_reward(0.0, &[-0.1], &[-0.1, -0.2], 0.1).is_err());
        assert!(shape_reward(1.0, &[], &[], 0.1).is_err());
    }

    #[test]
    fn controller_holds_at_target() {
        let mut c = KlController::adaptive(0.1, 0.5);
        let beta = c.adaptive_beta_update(0.5);
        assert_eq!(beta, 0.1);
    }

    #[test]
    fn controller_clips_the_error_term() {
        let mut c = KlController::adaptive(0.1, 0.5);
        let beta = c.adaptive_beta_update(1.0); // 2x target → e clipped to 0.2
        assert!((beta - 0.1 * 1.02).abs() < 1e-15);
    }

    #[test]
    fn controller_grows_geometrically_under_persistent_overshoot() {
        let mut c = KlController::adaptive(0.1, 0.5);
        for _ in 0..25 {
            c.adaptive_beta_update(1.0);
        }
        let expected = 0.1 * 1.02f64.powi(25);
        assert!((c.beta - expected).abs() < 1e-12);
    }

    #[test]
    fn controller_with_zero_gain_is_identity() {
        let mut c = KlController { beta: 0.3, target_kl: 0.5, gain: 0.0, adaptive: true };
        assert_eq!(c.adaptive_beta_update(10.0), 0.3);
    }

    #[test]
    fn controller_never_goes_negative() {
        let mut c = KlController { beta: 1e-12, target_kl: 0.5, gain: 0.1, adaptive: true };
        for _ in 0..1000 {
            let beta = c.adaptive_beta_update(0.0);
            assert!(beta >= 0.0);
        }
    }

    #[test]
    fn preference_loss_at_zero_margin_is_ln2() {
        assert!((preference_loss(1.3, 1.3) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn preference_loss_vanishes_for_large_margin() {
        assert!(preference_loss(50.0, 0.0) < 1e-12);
        assert!(preference_loss(1000.0, -1000.0) == 0.0);
    }

    #[test]
    fn preference_loss_gradient_at_zero_is_minus_half() {
        let g = finite_diff_grad(|d| Ok(preference_loss(d[0], 0.0)), &[0.0], 1e-6).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn preference_loss_pair_sum_is_convex_bound() {
        for (a, b) in [(0.0, 0.0), (1.0, -1.0), (3.5, 3.5), (-2.0, 0.5)] {
            let s = preference_loss(a, b) + preference_loss(b, a);
            assert!(s >= 2.0 * std::f64::consts::LN_2 - 1e-12);
            if a == b {
                assert!((s - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upvote_scores() {
        assert_eq!(upvote_score(0).unwrap(), 0.0);
        assert_eq!(upvote_score(1).unwrap(), 1.0);
        assert_eq!(upvote_score(3).unwrap(), 2.0);
        assert!(upvote_score(-1).is_err());
    }
}
