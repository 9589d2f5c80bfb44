//! Conditional autoregressive categorical policy over a finite vocabulary.
//!
//! Architecture, fixed at toy scale: a prompt encoder (embedding + one
//! recurrent tanh layer of width H), a decoder (embedding + recurrent tanh
//! layer + output projection), and a scalar value head on the decoder hidden
//! state. The decoder cell additionally reads the encoder state aligned
//! with its position (the last encoder state once past the prompt), which
//! stands in for attention at this scale: without it, conditioning on the
//! prompt would have to squeeze through a single fixed-size vector. With
//! `value_head_detached` the value function gets its own trunk so
//! policy-scope resets cannot perturb it through shared weights.
//!
//! Generation starts from the end-of-sequence token as input, terminates at
//! EOS, and appends EOS at `max_len` if the policy never produced it.

mod checkpoint;
mod params;
mod trajectory;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{flatten, load_scoped, ParamLayout, ParamScope, ParamVector, TensorScope};
pub use trajectory::{Token, Trajectory, EOS};

use crate::error::{Error, Result};
use crate::gradcore::{softmax_masked, Gradients, NodeId, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub value_head_detached: bool,
}

impl PolicyConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        PolicyConfig {
            vocab_size,
            embed_dim: 16,
            hidden_dim: 32,
            max_len,
            value_head_detached: false,
        }
    }

    pub fn layout_tag(&self) -> String {
        format!(
            "seqpolicy-v1,vocab={},embed={},hidden={},max_len={},detached={}",
            self.vocab_size, self.embed_dim, self.hidden_dim, self.max_len, self.value_head_detached
        )
    }

    fn layout(&self) -> ParamLayout {
        let (v, e, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        let mut specs: Vec<(&'static str, Vec<usize>, TensorScope)> = vec![
            ("enc_embed", vec![v, e], TensorScope::Policy),
            ("enc_wx", vec![h, e], TensorScope::Policy),
            ("enc_wh", vec![h, h], TensorScope::Policy),
            ("enc_b", vec![h], TensorScope::Policy),
            ("dec_embed", vec![v, e], TensorScope::Policy),
            ("dec_wx", vec![h, e], TensorScope::Policy),
            ("dec_wh", vec![h, h], TensorScope::Policy),
            ("dec_ctx", vec![h, h], TensorScope::Policy),
            ("dec_b", vec![h], TensorScope::Policy),
            ("out_w", vec![v, h], TensorScope::Policy),
            ("out_b", vec![v], TensorScope::Policy),
        ];
        if self.value_head_detached {
            specs.push(("vnet_embed", vec![v, e], TensorScope::Value));
            specs.push(("vnet_wx", vec![h, e], TensorScope::Value));
            specs.push(("vnet_wh", vec![h, h], TensorScope::Value));
            specs.push(("vnet_ctx", vec![h, h], TensorScope::Value));
            specs.push(("vnet_b", vec![h], TensorScope::Value));
        }
        specs.push(("value_w", vec![1, h], TensorScope::Value));
        specs.push(("value_b", vec![1], TensorScope::Value));
        ParamLayout::new(self.layout_tag(), &specs)
    }
}

/// The policy: owns one tensor per layout entry, in layout order.
#[derive(Debug, Clone)]
pub struct SeqPolicy {
    cfg: PolicyConfig,
    layout: ParamLayout,
    tensors: Vec<Tensor>,
}

impl SeqPolicy {
    /// Random initialization: weights uniform in ±1/sqrt(fan_in), biases and
    /// value head at zero.
    pub fn init(cfg: PolicyConfig, rng: &mut impl Rng) -> Self {
        let layout = cfg.layout();
        let tensors = layout
            .entries()
            .iter()
            .map(|e| {
                let numel: usize = e.shape.iter().product();
                if e.name.ends_with("_b") || e.name.starts_with("value_") {
                    Tensor::new(e.shape.clone(), vec![0.0; numel]).unwrap()
                } else {
                    let fan_in = *e.shape.last().unwrap() as f64;
                    let bound = 1.0 / fan_in.sqrt();
                    let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
                    Tensor::new(e.shape.clone(), data).unwrap()
                }
            })
            .collect();
        SeqPolicy { cfg, layout, tensors }
    }

    /// All-zero weights: exactly the uniform policy at every step.
    pub fn zeroed(cfg: PolicyConfig) -> Self {
        let layout = cfg.layout();
        let tensors =
            layout.entries().iter().map(|e| Tensor::zeros(e.shape.clone())).collect();
        SeqPolicy { cfg, layout, tensors }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    pub fn extract_params(&self) -> ParamVector {
        flatten(&self.layout, &self.tensors)
    }

    pub fn load_params(&mut self, source: &ParamVector, scope: ParamScope) -> Result<()> {
        load_scoped(&self.layout, &mut self.tensors, source, scope)
    }

    /// Builds a recording graph with this policy's parameters as leaves.
    pub fn graph(&self) -> PolicyGraph<'_> {
        let mut tape = Tape::new();
        let nodes = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        PolicyGraph { policy: self, tape, param_nodes: nodes }
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        for &t in tokens {
            if t >= self.cfg.vocab_size {
                return Err(Error::InvalidToken { token: t, vocab: self.cfg.vocab_size });
            }
        }
        Ok(())
    }

    /// Samples one trajectory; `logp_online` and `values` are filled.
    /// Sampling uses `temperature`; recorded log-probs are the policy's own
    /// (temperature-1) values, so they match a `log_prob` recomputation.
    pub fn sample(
        &self,
        prompt: &[Token],
        rng: &mut impl Rng,
        temperature: f64,
    ) -> Result<Trajectory> {
        assert!(temperature > 0.0, "temperature must be positive; use greedy_decode for argmax");
        let mut graph = self.graph();
        let state = graph.encode(prompt)?;
        let rollout = graph.sample_rollout(state, rng, temperature, &mut no_mask)?;
        Ok(Trajectory {
            prompt: prompt.to_vec(),
            response: rollout.tokens.clone(),
            logp_online: rollout.logp_values(&graph),
            values: rollout.value_values(&graph),
            ..Default::default()
        })
    }

    /// Deterministic argmax decoding (the temperature → 0 limit).
    pub fn greedy_decode(&self, prompt: &[Token]) -> Result<Vec<Token>> {
        let mut graph = self.graph();
        let state = graph.encode(prompt)?;
        let rollout = graph.greedy_rollout(state)?;
        Ok(rollout.tokens)
    }

    /// Per-token log π(y_t | x, y_<t) for a given response.
    pub fn log_prob(&self, prompt: &[Token], response: &[Token]) -> Result<Vec<f64>> {
        let mut graph = self.graph();
        let state = graph.encode(prompt)?;
        let forced = graph.teacher_forced(state, response, false, None)?;
        Ok(forced.logp_values(&graph))
    }

    /// Entropy of the next-token distribution after `prefix`.
    pub fn step_entropy(&self, prompt: &[Token], prefix: &[Token]) -> Result<f64> {
        let mut graph = self.graph();
        let state = graph.encode(prompt)?;
        let (state, logits) = graph.advance(state, prefix)?;
        let _ = state;
        let h = graph.tape.entropy(logits)?;
        Ok(graph.tape.value(h).item())
    }

    /// Value estimate for the state after `prefix`.
    pub fn value(&self, prompt: &[Token], prefix: &[Token]) -> Result<f64> {
        let mut graph = self.graph();
        let state = graph.encode(prompt)?;
        let (state, _) = graph.advance(state, prefix)?;
        let v = graph.value_node(&state)?;
        Ok(graph.tape.value(v).item())
    }

    /// Raw next-token logits after `prefix` (used by masked decoding).
    pub fn step_logits(&self, prompt: &[Token], prefix: &[Token]) -> Result<Vec<f64>> {
        let mut graph = self.graph();
        let state = graph.encode(prompt)?;
        let (_, logits) = graph.advance(state, prefix)?;
        Ok(graph.tape.value(logits).data().to_vec())
    }
}

fn no_mask(_step: usize, _prefix: &[Token]) -> Result<Option<Vec<bool>>> {
    Ok(None)
}

/// Decoder state: the policy hidden node, the per-position encoder states
/// the decoder conditions on, and (when the value net is detached) the
/// parallel value-trunk state.
#[derive(Clone)]
pub struct DecState {
    h: NodeId,
    vh: Option<NodeId>,
    enc: std::rc::Rc<Vec<NodeId>>,
    venc: std::rc::Rc<Vec<NodeId>>,
    /// decoder steps taken so far
    pos: usize,
}

/// Nodes recorded for one rollout; values are read off the graph, gradients
/// flow through the node ids.
pub struct Rollout {
    pub tokens: Vec<Token>,
    pub logp_nodes: Vec<NodeId>,
    pub entropy_nodes: Vec<NodeId>,
    pub value_nodes: Vec<NodeId>,
    pub masks: Vec<Option<Vec<bool>>>,
}

impl Rollout {
    pub fn logp_values(&self, graph: &PolicyGraph<'_>) -> Vec<f64> {
        self.logp_nodes.iter().map(|n| graph.tape.value(*n).item()).collect()
    }

    pub fn entropy_values(&self, graph: &PolicyGraph<'_>) -> Vec<f64> {
        self.entropy_nodes.iter().map(|n| graph.tape.value(*n).item()).collect()
    }

    pub fn value_values(&self, graph: &PolicyGraph<'_>) -> Vec<f64> {
        self.value_nodes.iter().map(|n| graph.tape.value(*n).item()).collect()
    }
}

/// A recording view of the policy: parameters are tape leaves, so any scalar
/// assembled from rollout nodes can be differentiated back to a flat
/// layout-aligned gradient.
pub struct PolicyGraph<'a> {
    policy: &'a SeqPolicy,
    pub tape: Tape,
    param_nodes: Vec<NodeId>,
}

impl<'a> PolicyGraph<'a> {
    fn node(&self, name: &str) -> NodeId {
        let idx = self
            .policy
            .layout
            .entries()
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("no layout entry named {name}"));
        self.param_nodes[idx]
    }

    fn zero_hidden(&mut self) -> NodeId {
        self.tape.leaf(Tensor::zeros(vec![self.policy.cfg.hidden_dim]))
    }

    fn cell(
        &mut self,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
        embed: NodeId,
        token: Token,
        h: NodeId,
        ctx: Option<(NodeId, NodeId)>,
    ) -> Result<NodeId> {
        let e = self.tape.embed(embed, token)?;
        let xe = self.tape.matmul(wx, e)?;
        let hh = self.tape.matmul(wh, h)?;
        let mut s = self.tape.add(xe, hh)?;
        if let Some((ctx_w, ctx_h)) = ctx {
            let c = self.tape.matmul(ctx_w, ctx_h)?;
            s = self.tape.add(s, c)?;
        }
        let s2 = self.tape.add(s, b)?;
        self.tape.tanh(s2)
    }

    /// Runs the prompt encoder, keeping every per-position state for the
    /// decoder to condition on.
    pub fn encode(&mut self, prompt: &[Token]) -> Result<DecState> {
        self.policy.check_tokens(prompt)?;
        let (enc_embed, enc_wx, enc_wh, enc_b) =
            (self.node("enc_embed"), self.node("enc_wx"), self.node("enc_wh"), self.node("enc_b"));
        let mut h = self.zero_hidden();
        let mut enc_states = Vec::with_capacity(prompt.len());
        for &t in prompt {
            h = self.cell(enc_wx, enc_wh, enc_b, enc_embed, t, h, None)?;
            enc_states.push(h);
        }
        let (vh, venc) = if self.policy.cfg.value_head_detached {
            let (ve, vwx, vwh, vb) = (
                self.node("vnet_embed"),
                self.node("vnet_wx"),
                self.node("vnet_wh"),
                self.node("vnet_b"),
            );
            let mut vh = self.zero_hidden();
            let mut venc_states = Vec::with_capacity(prompt.len());
            for &t in prompt {
                vh = self.cell(vwx, vwh, vb, ve, t, vh, None)?;
                venc_states.push(vh);
            }
            (Some(vh), venc_states)
        } else {
            (None, Vec::new())
        };
        Ok(DecState {
            h,
            vh,
            enc: std::rc::Rc::new(enc_states),
            venc: std::rc::Rc::new(venc),
            pos: 0,
        })
    }

    /// Encoder state aligned with decoder step `pos` (1-indexed): the state
    /// at the matching prompt position, clamped to the last one.
    fn aligned(states: &[NodeId], pos: usize) -> Option<NodeId> {
        if states.is_empty() {
            None
        } else {
            Some(states[pos.min(states.len()) - 1])
        }
    }

    /// One decoder step on `prev`: new state plus next-token logits.
    pub fn step(&mut self, state: DecState, prev: Token) -> Result<(DecState, NodeId)> {
        if prev >= self.policy.cfg.vocab_size {
            return Err(Error::InvalidToken { token: prev, vocab: self.policy.cfg.vocab_size });
        }
        let pos = state.pos + 1;
        let ctx = Self::aligned(&state.enc, pos).map(|c| (self.node("dec_ctx"), c));
        let h = self.cell(
            self.node("dec_wx"),
            self.node("dec_wh"),
            self.node("dec_b"),
            self.node("dec_embed"),
            prev,
            state.h,
            ctx,
        )?;
        let proj = {
            let out_w = self.node("out_w");
            self.tape.matmul(out_w, h)?
        };
        let out_b = self.node("out_b");
        let logits = self.tape.add(proj, out_b)?;
        let vh = match state.vh {
            Some(vh) => {
                let vctx = Self::aligned(&state.venc, pos).map(|c| (self.node("vnet_ctx"), c));
                Some(self.cell(
                    self.node("vnet_wx"),
                    self.node("vnet_wh"),
                    self.node("vnet_b"),
                    self.node("vnet_embed"),
                    prev,
                    vh,
                    vctx,
                )?)
            }
            None => None,
        };
        Ok((DecState { h, vh, enc: state.enc, venc: state.venc, pos }, logits))
    }

    /// Advances the decoder over `prefix` starting from the BOS convention
    /// (EOS as first input) and returns the state plus next-token logits.
    pub fn advance(&mut self, state: DecState, prefix: &[Token]) -> Result<(DecState, NodeId)> {
        self.policy.check_tokens(prefix)?;
        let (mut state, mut logits) = self.step(state, EOS)?;
        for &t in prefix {
            let (s, l) = self.step(state, t)?;
            state = s;
            logits = l;
        }
        Ok((state, logits))
    }

    /// Value head applied to a decoder state.
    pub fn value_node(&mut self, state: &DecState) -> Result<NodeId> {
        let hidden = state.vh.unwrap_or(state.h);
        let vw = self.node("value_w");
        let prod = self.tape.matmul(vw, hidden)?;
        let vb = self.node("value_b");
        let v = self.tape.add(prod, vb)?;
        self.tape.sum(v)
    }

    /// Samples until EOS or `max_len` (EOS forced at the cap), recording
    /// per-token log-prob, entropy, and value nodes. `mask_fn` may restrict
    /// the sampling distribution at each step (masked decoding).
    pub fn sample_rollout(
        &mut self,
        state: DecState,
        rng: &mut impl Rng,
        temperature: f64,
        mask_fn: &mut dyn FnMut(usize, &[Token]) -> Result<Option<Vec<bool>>>,
    ) -> Result<Rollout> {
        self.rollout_inner(state, Some((rng as &mut dyn rand::RngCore, temperature)), mask_fn)
    }

    /// Argmax decoding with the same termination rules as sampling.
    pub fn greedy_rollout(&mut self, state: DecState) -> Result<Rollout> {
        self.rollout_inner(state, None, &mut no_mask)
    }

    fn rollout_inner(
        &mut self,
        state: DecState,
        mut sampler: Option<(&mut dyn rand::RngCore, f64)>,
        mask_fn: &mut dyn FnMut(usize, &[Token]) -> Result<Option<Vec<bool>>>,
    ) -> Result<Rollout> {
        let max_len = self.policy.cfg.max_len;
        let mut rollout = Rollout {
            tokens: Vec::new(),
            logp_nodes: Vec::new(),
            entropy_nodes: Vec::new(),
            value_nodes: Vec::new(),
            masks: Vec::new(),
        };
        let mut state = state;
        let mut prev = EOS;
        for t in 0..max_len {
            let (next_state, logits) = self.step(state, prev)?;
            state = next_state;
            let forced_eos = t + 1 == max_len;
            let mask = if forced_eos { None } else { mask_fn(t, &rollout.tokens)? };
            let token = if forced_eos {
                EOS
            } else {
                let z = self.tape.value(logits).data();
                match &mut sampler {
                    Some((rng, temperature)) => {
                        let scaled: Vec<f64> = z.iter().map(|v| v / *temperature).collect();
                        let probs = softmax_masked(&scaled, mask.as_deref());
                        categorical(&probs, *rng)
                    }
                    None => argmax(z),
                }
            };
            let value_node = self.value_node(&state)?;
            let logp = self.tape.log_softmax_pick_masked(logits, token, mask.clone())?;
            let entropy = self.tape.entropy_masked(logits, mask.clone())?;
            rollout.tokens.push(token);
            rollout.logp_nodes.push(logp);
            rollout.entropy_nodes.push(entropy);
            rollout.value_nodes.push(value_node);
            rollout.masks.push(mask);
            if token == EOS {
                break;
            }
            prev = token;
        }
        Ok(rollout)
    }

    /// Re-runs the decoder along a fixed response, recording the same nodes
    /// as sampling would. `masks`, when given, must be the masks used at
    /// sampling time (one per token).
    pub fn teacher_forced(
        &mut self,
        state: DecState,
        response: &[Token],
        with_values: bool,
        masks: Option<&[Option<Vec<bool>>]>,
    ) -> Result<Rollout> {
        self.policy.check_tokens(response)?;
        if let Some(m) = masks {
            if m.len() != response.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} masks for {} response tokens",
                    m.len(),
                    response.len()
                )));
            }
        }
        let mut rollout = Rollout {
            tokens: response.to_vec(),
            logp_nodes: Vec::new(),
            entropy_nodes: Vec::new(),
            value_nodes: Vec::new(),
            masks: Vec::new(),
        };
        let mut state = state;
        let mut prev = EOS;
        for (t, &token) in response.iter().enumerate() {
            let (next_state, logits) = self.step(state, prev)?;
            state = next_state;
            let mask = masks.and_then(|m| m[t].clone());
            let logp = self.tape.log_softmax_pick_masked(logits, token, mask.clone())?;
            let entropy = self.tape.entropy_masked(logits, mask.clone())?;
            if with_values {
                let v = self.value_node(&state)?;
                rollout.value_nodes.push(v);
            }
            rollout.logp_nodes.push(logp);
            rollout.entropy_nodes.push(entropy);
            rollout.masks.push(mask);
            prev = token;
        }
        Ok(rollout)
    }

    /// Backward pass of a scalar node, flattened into a layout-aligned
    /// gradient (zeros for parameters the loss never touched).
    pub fn flat_grad(&self, loss: NodeId) -> Result<Vec<f64>> {
        let grads = self.tape.backward(loss)?;
        Ok(self.flatten_grads(&grads))
    }

    fn flatten_grads(&self, grads: &Gradients) -> Vec<f64> {
        let layout = &self.policy.layout;
        let mut flat = vec![0.0; layout.total_len()];
        for (entry, node) in layout.entries().iter().zip(&self.param_nodes) {
            if let Some(g) = grads.get(*node) {
                let numel: usize = entry.shape.iter().product();
                flat[entry.offset..entry.offset + numel].copy_from_slice(g);
            }
        }
        flat
    }
}

fn categorical(probs: &[f64], rng: &mut dyn rand::RngCore) -> Token {
    let u: f64 = rand::Rng::gen(rng);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc slightly below 1; fall back to the last
    // positive-probability entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

fn argmax(z: &[f64]) -> Token {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}
