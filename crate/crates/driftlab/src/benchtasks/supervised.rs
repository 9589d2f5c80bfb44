//! Shared supervised machinery: cross-entropy steps and pretraining loops.

use crate::error::Result;
use crate::gradcore::NodeId;
use crate::optim::Adam;
use crate::seqpolicy::{PolicyGraph, SeqPolicy, Token};
use rand::Rng;

/// Mean per-token negative log-likelihood of (prompt, target) pairs, as a
/// scalar node on the given graph.
pub fn cross_entropy_node(
    graph: &mut PolicyGraph<'_>,
    batch: &[(Vec<Token>, Vec<Token>)],
) -> Result<NodeId> {
    let mut terms: Vec<(f64, NodeId)> = Vec::new();
    let total_tokens: usize = batch.iter().map(|(_, t)| t.len()).sum();
    let w = -1.0 / total_tokens.max(1) as f64;
    for (prompt, target) in batch {
        let state = graph.encode(prompt)?;
        let rollout = graph.teacher_forced(state, target, false, None)?;
        for lp in rollout.logp_nodes {
            terms.push((w, lp));
        }
    }
    graph.tape.affine_sum(&terms, 0.0)
}

/// One supervised step on a minibatch; returns the loss value.
pub fn supervised_step(
    policy: &mut SeqPolicy,
    adam: &mut Adam,
    batch: &[(Vec<Token>, Vec<Token>)],
) -> Result<f64> {
    let mut graph = policy.graph();
    let loss = cross_entropy_node(&mut graph, batch)?;
    let loss_value = graph.tape.value(loss).item();
    let grad = graph.flat_grad(loss)?;
    let mut params = policy.extract_params();
    adam.step(&mut params.values, &grad);
    policy.load_params(&params, crate::seqpolicy::ParamScope::All)?;
    Ok(loss_value)
}

/// Minibatch Adam over shuffled epochs. Zero epochs leave the policy
/// untouched. Returns the mean loss per epoch.
pub fn pretrain_policy(
    policy: &mut SeqPolicy,
    data: &[(Vec<Token>, Vec<Token>)],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut adam = Adam::new(crate::optim::AdamConfig::with_lr(lr), policy.layout());
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<(Vec<Token>, Vec<Token>)> =
                chunk.iter().map(|&i| data[i].clone()).collect();
            sum += supervised_step(policy, &mut adam, &batch)?;
            batches += 1;
        }
        epoch_losses.push(sum / batches.max(1) as f64);
    }
    Ok(epoch_losses)
}

/// Greedy per-token accuracy against gold targets: positions beyond the
/// decoded length count as wrong, and `matches` decides token equivalence
/// (exact match or any-synonym match).
pub fn greedy_token_accuracy(
    policy: &SeqPolicy,
    pairs: &[(Vec<Token>, Vec<Token>)],
    matches: impl Fn(usize, Token, Token) -> bool,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (prompt, gold) in pairs {
        let decoded = policy.greedy_decode(prompt)?;
        for (pos, &g) in gold.iter().enumerate() {
            total += 1;
            if let Some(&got) = decoded.get(pos) {
                if matches(pos, got, g) {
                    correct += 1;
                }
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}
