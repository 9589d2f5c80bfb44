//! driftlab: a desk-scale laboratory for studying drift-mitigated RL
//! fine-tuning of sequence policies.
//!
//! The library trains tiny autoregressive policies on seeded synthetic tasks
//! and compares mitigation strategies for reward hacking / capability drift:
//! KL-shaped rewards, supervised multitasking, masked decoding, plain
//! parameter resets, and elastic resets (reset the policy to an exponential
//! moving average of itself, then reset the average to the initial model).
//! Evaluation is centered on reward-vs-drift Pareto frontiers.
//!
//! Module map:
//! - [`gradcore`]: dense tensors + reverse-mode autodiff.
//! - [`seqpolicy`]: conditional autoregressive policies with value heads.
//! - [`driftctl`]: EMA tracking and the reset family.
//! - [`rewardlab`]: reward models, KL-shaped rewards, adaptive coefficients.
//! - [`trainers`]: REINFORCE and PPO training loops plus baselines.
//! - [`benchtasks`]: seeded synthetic benchmark environments.
//! - [`evalkit`]: BLEU, perplexity, empirical KL, Pareto frontiers.
//! - [`runner`]: experiment grids, persistence, summaries.

pub mod error;
pub mod evalkit;
#[cfg(test)]
mod evalkit_tests;
pub mod gradcore;
pub mod benchtasks;
pub mod driftctl;
pub mod optim;
pub mod rewardlab;
pub mod seqpolicy;

pub use error::{Error, Result};
