//! Seeded synthetic environments mirroring drift benchmarks at desk scale,
//! plus the supervised pretraining that gives every run a "pretrained"
//! starting policy with measurable capabilities.

mod data;
pub mod generator;
pub mod pivot;
mod supervised;

pub mod continuation;

pub use data::{read_pairs_jsonl, read_seqs_jsonl, write_pairs_jsonl, write_seqs_jsonl};
pub use generator::ReferenceGenerator;
pub use supervised::{cross_entropy_node, greedy_token_accuracy, pretrain_policy, supervised_step};

use crate::error::{Error, Result};
use crate::seqpolicy::{ParamVector, SeqPolicy};
use continuation::{build_continuation_task, ContinuationSizes, ContinuationTask};
use pivot::{build_pivot_task, PivotSizes, PivotTask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Pretrained-sender quality gate; calibrated from the pilot run recorded
/// in docs/calibration.md.
pub const PIVOT_PRETRAIN_ACCURACY_FLOOR: f64 = 0.9;
/// Pretrained continuation policy must come within this factor of the
/// generator's entropy-implied perplexity floor.
pub const CONTINUATION_PPL_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pivot,
    Continuation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub sender_epochs: usize,
    pub receiver_epochs: usize,
    pub continuation_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            sender_epochs: 20,
            // deliberately short: the receiver keeps training during RL, so
            // task scores start below ceiling and improve over the run
            receiver_epochs: 2,
            continuation_epochs: 8,
            batch_size: 16,
            learning_rate: 0.01,
        }
    }
}

/// A pivot task plus the pretrained parameter snapshots every arm of an
/// experiment starts from.
#[derive(Debug, Clone)]
pub struct PreparedPivot {
    pub task: PivotTask,
    pub sender_init: ParamVector,
    pub receiver_init: ParamVector,
    pub sender_drift_accuracy: f64,
    pub initial_task_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct PreparedContinuation {
    pub task: ContinuationTask,
    pub policy_init: ParamVector,
    pub pretrain_perplexity: f64,
    pub floor_perplexity: f64,
}

#[derive(Debug, Clone)]
pub enum PreparedTask {
    Pivot(Box<PreparedPivot>),
    Continuation(Box<PreparedContinuation>),
}

impl PreparedTask {
    pub fn kind(&self) -> TaskKind {
        match self {
            PreparedTask::Pivot(_) => TaskKind::Pivot,
            PreparedTask::Continuation(_) => TaskKind::Continuation,
        }
    }
}

/// Builds the pivot task for a seed and pretrains sender and receiver.
/// Fails with a diagnostic if the sender misses the accuracy floor.
pub fn prepare_pivot(seed: u64, sizes: PivotSizes, cfg: &PretrainConfig) -> Result<PreparedPivot> {
    let task = build_pivot_task(seed, sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xa076_1d64_78bd_642f).wrapping_add(2));
    let mut sender = SeqPolicy::init(task.policy_config(), &mut rng);
    let mut receiver = SeqPolicy::init(task.policy_config(), &mut rng);

    pretrain_policy(&mut sender, &task.pretrain, cfg.sender_epochs, cfg.batch_size, cfg.learning_rate, &mut rng)?;
    pretrain_policy(
        &mut receiver,
        &task.receiver_pretrain,
        cfg.receiver_epochs,
        cfg.batch_size,
        cfg.learning_rate,
        &mut rng,
    )?;

    let sender_drift_accuracy = task.drift_accuracy(&sender)?;
    if sender_drift_accuracy < PIVOT_PRETRAIN_ACCURACY_FLOOR {
        return Err(Error::NonConvergence(format!(
            "pretrained sender reached source→intermediate accuracy {sender_drift_accuracy:.3} \
             after {} epochs, below the {PIVOT_PRETRAIN_ACCURACY_FLOOR} floor",
            cfg.sender_epochs
        )));
    }
    let initial_task_accuracy = task.task_accuracy(&sender, &receiver)?;
    Ok(PreparedPivot {
        sender_init: sender.extract_params(),
        receiver_init: receiver.extract_params(),
        task,
        sender_drift_accuracy,
        initial_task_accuracy,
    })
}

/// Builds the continuation task for a seed and pretrains the policy to
/// imitate the reference generator, enforcing the perplexity gate.
pub fn prepare_continuation(
    seed: u64,
    sizes: ContinuationSizes,
    cfg: &PretrainConfig,
) -> Result<PreparedContinuation> {
    let task = build_continuation_task(seed, sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xa076_1d64_78bd_642f).wrapping_add(3));
    let mut policy = SeqPolicy::init(task.policy_config(), &mut rng);
    pretrain_policy(
        &mut policy,
        &task.pretrain_data,
        cfg.continuation_epochs,
        cfg.batch_size,
        cfg.learning_rate,
        &mut rng,
    )?;

    let ppl = task.drift_perplexity(&policy)?;
    let content = task.sizes.seq_len - task.sizes.prompt_len;
    // The EOS step carries no entropy, so the per-token floor dilutes the
    // content entropy over content + 1 scored tokens.
    let floor =
        (task.generator.entropy_floor() * content as f64 / (content as f64 + 1.0)).exp();
    if ppl > CONTINUATION_PPL_FACTOR * floor {
        return Err(Error::NonConvergence(format!(
            "pretrained continuation policy at perplexity {ppl:.3}, above {CONTINUATION_PPL_FACTOR} x \
             floor {floor:.3} after {} epochs",
            cfg.continuation_epochs
        )));
    }
    Ok(PreparedContinuation {
        policy_init: policy.extract_params(),
        task,
        pretrain_perplexity: ppl,
        floor_perplexity: floor,
    })
}
