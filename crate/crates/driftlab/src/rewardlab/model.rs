//! Trainable reward models: a tiny recurrent encoder with a scalar head.
//!
//! Two kinds share the architecture: `Classifier` squashes the head output
//! through a sigmoid (scores in [0,1]); `Preference` returns the raw score
//! and trains on pairwise comparisons.

use crate::error::{Error, Result};
use crate::gradcore::{NodeId, Tape, Tensor};
use crate::optim::{Adam, AdamConfig};
use crate::seqpolicy::{flatten, load_scoped, ParamLayout, ParamScope, ParamVector, TensorScope, Token};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Classifier,
    Preference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub kind: RewardKind,
}

impl RewardModelConfig {
    pub fn new(vocab_size: usize, kind: RewardKind) -> Self {
        RewardModelConfig { vocab_size, embed_dim: 16, hidden_dim: 32, kind }
    }

    fn layout_tag(&self) -> String {
        let kind = match self.kind {
            RewardKind::Classifier => "classifier",
            RewardKind::Preference => "preference",
        };
        format!(
            "rewardmodel-v1,vocab={},embed={},hidden={},kind={}",
            self.vocab_size, self.embed_dim, self.hidden_dim, kind
        )
    }

    fn layout(&self) -> ParamLayout {
        let (v, e, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        ParamLayout::new(
            self.layout_tag(),
            &[
                ("embed", vec![v, e], TensorScope::Policy),
                ("wx", vec![h, e], TensorScope::Policy),
                ("wh", vec![h, h], TensorScope::Policy),
                ("b", vec![h], TensorScope::Policy),
                ("head_w", vec![1, h], TensorScope::Policy),
                ("head_b", vec![1], TensorScope::Policy),
            ],
        )
    }
}

#[derive(Debug, Clone)]
pub struct RewardModel {
    cfg: RewardModelConfig,
    layout: ParamLayout,
    tensors: Vec<Tensor>,
}

/// A sequence with a binary attribute label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSeq {
    pub tokens: Vec<Token>,
    pub label: bool,
}

/// A prompt with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.chosen == self.rejected {
            return Err(Error::DegenerateDataset(
                "preference pair with identical responses".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum RewardDataset {
    Labeled(Vec<LabeledSeq>),
    Pairs(Vec<PreferencePair>),
}

#[derive(Debug, Clone)]
pub struct RewardTrainReport {
    /// Held-out accuracy: thresholded at 0.5 for the classifier, pairwise
    /// ordering accuracy for preferences.
    pub heldout_accuracy: f64,
    /// Mean training loss per epoch.
    pub train_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl RewardModel {
    pub fn init(cfg: RewardModelConfig, rng: &mut impl Rng) -> Self {
        let layout = cfg.layout();
        let tensors = layout
            .entries()
            .iter()
            .map(|e| {
                let numel: usize = e.shape.iter().product();
                if e.name.ends_with('b') {
                    Tensor::new(e.shape.clone(), vec![0.0; numel]).unwrap()
                } else {
                    let fan_in = *e.shape.last().unwrap() as f64;
                    let bound = 1.0 / fan_in.sqrt();
                    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
                    Tensor::new(e.shape.clone(), data).unwrap()
                }
            })
            .collect();
        RewardModel { cfg, layout, tensors }
    }

    pub fn config(&self) -> &RewardModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn extract_params(&self) -> ParamVector {
        flatten(&self.layout, &self.tensors)
    }

    pub fn load_params(&mut self, source: &ParamVector) -> Result<()> {
        load_scoped(&self.layout, &mut self.tensors, source, ParamScope::All)
    }

    /// Score of a token sequence: sigmoid-squashed for the classifier kind,
    /// raw head output for the preference kind.
    pub fn score(&self, tokens: &[Token]) -> Result<f64> {
        let raw = self.raw_score(tokens)?;
        Ok(match self.cfg.kind {
            RewardKind::Classifier => sigmoid(raw),
            RewardKind::Preference => raw,
        })
    }

    pub fn raw_score(&self, tokens: &[Token]) -> Result<f64> {
        let mut graph = RmGraph::new(self);
        let s = graph.raw_score_node(tokens)?;
        Ok(graph.tape.value(s).item())
    }

    /// Scores prompt + response as one sequence.
    pub fn score_response(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        let mut seq = prompt.to_vec();
        seq.extend_from_slice(response);
        self.score(&seq)
    }
}

/// Recording view of a reward model, mirroring `PolicyGraph`.
pub(crate) struct RmGraph<'a> {
    model: &'a RewardModel,
    pub(crate) tape: Tape,
    param_nodes: Vec<NodeId>,
}

impl<'a> RmGraph<'a> {
    pub(crate) fn new(model: &'a RewardModel) -> Self {
        let mut tape = Tape::new();
        let param_nodes = model.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        RmGraph { model, tape, param_nodes }
    }

    fn node(&self, name: &str) -> NodeId {
        let idx = self
            .model
            .layout
            .entries()
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("no layout entry named {name}"));
        self.param_nodes[idx]
    }

    /// Raw head output for a token sequence, as a differentiable node.
    pub(crate) fn raw_score_node(&mut self, tokens: &[Token]) -> Result<NodeId> {
        for &t in tokens {
            if t >= self.model.cfg.vocab_size {
                return Err(Error::InvalidToken { token: t, vocab: self.model.cfg.vocab_size });
            }
        }
        let (embed, wx, wh, b) =
            (self.node("embed"), self.node("wx"), self.node("wh"), self.node("b"));
        let mut h = self.tape.leaf(Tensor::zeros(vec![self.model.cfg.hidden_dim]));
        for &t in tokens {
            let e = self.tape.embed(embed, t)?;
            let xe = self.tape.matmul(wx, e)?;
            let hh = self.tape.matmul(wh, h)?;
            let s1 = self.tape.add(xe, hh)?;
            let s2 = self.tape.add(s1, b)?;
            h = self.tape.tanh(s2)?;
        }
        let head_w = self.node("head_w");
        let prod = self.tape.matmul(head_w, h)?;
        let head_b = self.node("head_b");
        let s = self.tape.add(prod, head_b)?;
        self.tape.sum(s)
    }

    /// -log σ(s) or -log(1-σ(s)), built from the existing softmax primitive:
    /// σ(s) is softmax([0, s]) at index 1.
    pub(crate) fn bce_node(&mut self, score: NodeId, label: bool) -> Result<NodeId> {
        let two = self.logit_pair(score)?;
        let idx = if label { 1 } else { 0 };
        let logp = self.tape.log_softmax_pick(two, idx)?;
        self.tape.affine_sum(&[(-1.0, logp)], 0.0)
    }

    /// -ln σ(s_plus - s_minus), the Bradley-Terry objective.
    pub(crate) fn preference_node(&mut self, s_plus: NodeId, s_minus: NodeId) -> Result<NodeId> {
        let diff = self.tape.affine_sum(&[(1.0, s_plus), (-1.0, s_minus)], 0.0)?;
        let two = self.logit_pair(diff)?;
        let logp = self.tape.log_softmax_pick(two, 1)?;
        self.tape.affine_sum(&[(-1.0, logp)], 0.0)
    }

    /// [0, s] as a 2-vector node.
    fn logit_pair(&mut self, s: NodeId) -> Result<NodeId> {
        let selector = self.tape.leaf(Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap());
        self.tape.matmul(selector, s)
    }

    pub(crate) fn flat_grad(&self, loss: NodeId) -> Result<Vec<f64>> {
        let grads = self.tape.backward(loss)?;
        let layout = &self.model.layout;
        let mut flat = vec![0.0; layout.total_len()];
        for (entry, node) in layout.entries().iter().zip(&self.param_nodes) {
            if let Some(g) = grads.get(*node) {
                let numel: usize = entry.shape.iter().product();
                flat[entry.offset..entry.offset + numel].copy_from_slice(g);
            }
        }
        Ok(flat)
    }
}

/// Trains in place with full-batch Adam and reports held-out accuracy.
/// A deterministic shuffle under the caller's RNG picks the 20% held-out
/// split, so training is reproducible under a fixed seed.
pub fn train_reward_model(
    model: &mut RewardModel,
    dataset: &RewardDataset,
    epochs: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<RewardTrainReport> {
    let n = match dataset {
        RewardDataset::Labeled(rows) => rows.len(),
        RewardDataset::Pairs(rows) => rows.len(),
    };
    if n == 0 {
        return Err(Error::DegenerateDataset("empty dataset".into()));
    }
    match dataset {
        RewardDataset::Labeled(rows) => {
            let positives = rows.iter().filter(|r| r.label).count();
            if positives == 0 || positives == rows.len() {
                return Err(Error::DegenerateDataset(
                    "classifier training needs both label classes".into(),
                ));
            }
            if model.cfg.kind != RewardKind::Classifier {
                return Err(Error::config("reward_model.kind", "labeled data needs a classifier"));
            }
        }
        RewardDataset::Pairs(rows) => {
            if rows.iter().all(|p| p.chosen == p.rejected) {
                return Err(Error::DegenerateDataset("all preference pairs are ties".into()));
            }
            for p in rows {
                p.validate()?;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let heldout_count = (n / 5).max(1).min(n - 1);
    let (heldout_idx, train_idx) = order.split_at(heldout_count);

    let mut adam = Adam::new(AdamConfig::with_lr(lr), &model.layout);
    let mut train_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut graph = RmGraph::new(model);
        let mut terms = Vec::with_capacity(train_idx.len());
        let weight = 1.0 / train_idx.len() as f64;
        match dataset {
            RewardDataset::Labeled(rows) => {
                for &i in train_idx {
                    let s = graph.raw_score_node(&rows[i].tokens)?;
                    let loss = graph.bce_node(s, rows[i].label)?;
                    terms.push((weight, loss));
                }
            }
            RewardDataset::Pairs(rows) => {
                for &i in train_idx {
                    let mut chosen = rows[i].prompt.clone();
                    chosen.extend_from_slice(&rows[i].chosen);
                    let mut rejected = rows[i].prompt.clone();
                    rejected.extend_from_slice(&rows[i].rejected);
                    let sp = graph.raw_score_node(&chosen)?;
                    let sm = graph.raw_score_node(&rejected)?;
                    let loss = graph.preference_node(sp, sm)?;
                    terms.push((weight, loss));
                }
            }
        }
        let total = graph.tape.affine_sum(&terms, 0.0)?;
        train_losses.push(graph.tape.value(total).item());
        let grad = graph.flat_grad(total)?;
        let mut params = model.extract_params();
        adam.step(&mut params.values, &grad);
        model.load_params(&params)?;
    }

    let mut correct = 0usize;
    match dataset {
        RewardDataset::Labeled(rows) => {
            for &i in heldout_idx {
                let s = model.score(&rows[i].tokens)?;
                if (s >= 0.5) == rows[i].label {
                    correct += 1;
                }
            }
        }
        RewardDataset::Pairs(rows) => {
            for &i in heldout_idx {
                let sp = model.score_response(&rows[i].prompt, &rows[i].chosen)?;
                let sm = model.score_response(&rows[i].prompt, &rows[i].rejected)?;
                if sp > sm {
                    correct += 1;
                }
            }
        }
    }
    Ok(RewardTrainReport {
        heldout_accuracy: correct as f64 / heldout_idx.len() as f64,
        train_losses,
    })
}

/// Writes preference pairs as JSON lines:
/// `{"prompt": [ints], "chosen": [ints], "rejected": [ints]}`.
pub fn write_preference_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_preference_jsonl(path: &Path) -> Result<Vec<PreferencePair>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(&line)?;
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}
