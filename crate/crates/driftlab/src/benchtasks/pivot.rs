//! Pivot-communication task: a sender translates source sequences into an
//! intermediate alphabet, a receiver decodes them into targets, and only
//! (source, target) pairs exist at fine-tuning time.
//!
//! Every source token has `ambiguity` synonymous intermediate tokens; any
//! synonym counts as a valid code, and all synonyms of a token map to the
//! same target, so the composed ground-truth map is consistent and an
//! oracle pair scores 1.0. Spare intermediate tokens are left unassigned:
//! a sender that recruits them (or permutes the code) keeps full task
//! accuracy as long as the receiver co-adapts, while the source→intermediate
//! validity metric collapses. That is the drift failure mode, and it exists
//! by construction.

use super::supervised::greedy_token_accuracy;
use crate::error::{Error, Result};
use crate::evalkit::corpus_bleu;
use crate::seqpolicy::{PolicyConfig, SeqPolicy, Token, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PivotSizes {
    /// Source alphabet size (token ids 1..=source_alphabet).
    pub source_alphabet: usize,
    /// Shared vocabulary size for every model (id 0 is EOS).
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Synonymous intermediate tokens per source token.
    pub ambiguity: usize,
    pub pretrain_pairs: usize,
    pub prompt_pool: usize,
    pub eval_pairs: usize,
}

impl Default for PivotSizes {
    fn default() -> Self {
        PivotSizes {
            source_alphabet: 12,
            vocab_size: 32,
            seq_len: 6,
            ambiguity: 2,
            pretrain_pairs: 192,
            prompt_pool: 192,
            eval_pairs: 48,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PivotTask {
    pub sizes: PivotSizes,
    pub seed: u64,
    /// Synonym set per source token (index a-1); sets are disjoint.
    synonyms: Vec<Vec<Token>>,
    /// Gold target token per source token (index a-1).
    gold_target: Vec<Token>,
    /// (source sequence, sampled intermediate sequence + EOS) pairs.
    pub pretrain: Vec<(Vec<Token>, Vec<Token>)>,
    /// (intermediate sequence, gold target sequence + EOS) pairs.
    pub receiver_pretrain: Vec<(Vec<Token>, Vec<Token>)>,
    /// Source sequences used as RL prompts.
    pub prompt_pool: Vec<Vec<Token>>,
    /// Held-out source sequences, disjoint from the prompt pool.
    pub eval_sources: Vec<Vec<Token>>,
}

pub fn build_pivot_task(seed: u64, sizes: PivotSizes) -> Result<PivotTask> {
    let s = &sizes;
    if s.vocab_size < 4 || s.seq_len < 2 {
        return Err(Error::TaskConstruction(format!(
            "vocab {} and seq_len {} below minimum sizes",
            s.vocab_size, s.seq_len
        )));
    }
    if s.ambiguity < 1 || s.source_alphabet < 2 {
        return Err(Error::TaskConstruction("need ambiguity >= 1 and at least 2 source tokens".into()));
    }
    if s.source_alphabet >= s.vocab_size {
        return Err(Error::TaskConstruction("source alphabet must fit inside the vocabulary".into()));
    }
    let needed = s.ambiguity * s.source_alphabet;
    if needed > s.vocab_size - 1 {
        return Err(Error::TaskConstruction(format!(
            "vocabulary of {} cannot host {} intermediate tokens: size too small to admit \
             the ambiguity parameter",
            s.vocab_size, needed
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut pool: Vec<Token> = (1..s.vocab_size).collect();
    shuffle(&mut pool, &mut rng);

    let synonyms: Vec<Vec<Token>> = (0..s.source_alphabet)
        .map(|i| pool[i * s.ambiguity..(i + 1) * s.ambiguity].to_vec())
        .collect();

    let mut gold_target: Vec<Token> = (1..=s.source_alphabet).collect();
    shuffle(&mut gold_target, &mut rng);

    let sample_source = |rng: &mut ChaCha8Rng| -> Vec<Token> {
        (0..s.seq_len).map(|_| rng.gen_range(1..=s.source_alphabet)).collect()
    };

    let mut pretrain = Vec::with_capacity(s.pretrain_pairs);
    for _ in 0..s.pretrain_pairs {
        let src = sample_source(&mut rng);
        let mut e: Vec<Token> = src
            .iter()
            .map(|&a| {
                let set = &synonyms[a - 1];
                set[rng.gen_range(0..set.len())]
            })
            .collect();
        e.push(EOS);
        pretrain.push((src, e));
    }

    let mut receiver_pretrain = Vec::with_capacity(s.pretrain_pairs);
    for _ in 0..s.pretrain_pairs {
        let src = sample_source(&mut rng);
        let e: Vec<Token> = src
            .iter()
            .map(|&a| {
                let set = &synonyms[a - 1];
                set[rng.gen_range(0..set.len())]
            })
            .collect();
        let mut d: Vec<Token> = src.iter().map(|&a| gold_target[a - 1]).collect();
        d.push(EOS);
        receiver_pretrain.push((e, d));
    }

    let mut prompt_pool = Vec::with_capacity(s.prompt_pool);
    for _ in 0..s.prompt_pool {
        prompt_pool.push(sample_source(&mut rng));
    }
    let mut eval_sources = Vec::with_capacity(s.eval_pairs);
    while eval_sources.len() < s.eval_pairs {
        let src = sample_source(&mut rng);
        if !prompt_pool.contains(&src) && !eval_sources.contains(&src) {
            eval_sources.push(src);
        }
    }

    Ok(PivotTask {
        sizes,
        seed,
        synonyms,
        gold_target,
        pretrain,
        receiver_pretrain,
        prompt_pool,
        eval_sources,
    })
}

fn shuffle<T>(v: &mut [T], rng: &mut impl Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

impl PivotTask {
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig::new(self.sizes.vocab_size, self.sizes.seq_len + 1)
    }

    pub fn synonyms_of(&self, source_token: Token) -> &[Token] {
        &self.synonyms[source_token - 1]
    }

    /// Canonical intermediate encoding: the first synonym of each token.
    pub fn canonical_intermediate(&self, src: &[Token]) -> Vec<Token> {
        src.iter().map(|&a| self.synonyms[a - 1][0]).collect()
    }

    pub fn gold_targets(&self, src: &[Token]) -> Vec<Token> {
        src.iter().map(|&a| self.gold_target[a - 1]).collect()
    }

    /// The ground-truth intermediate→target map (well-defined because all
    /// synonyms of a source token share its target). Unassigned (spare)
    /// tokens return None.
    pub fn oracle_decode(&self, intermediate: Token) -> Option<Token> {
        (1..=self.sizes.source_alphabet)
            .find(|&a| self.synonyms[a - 1].contains(&intermediate))
            .map(|a| self.gold_target[a - 1])
    }

    /// Whether an emitted intermediate token is a valid code for `source`.
    pub fn is_valid_code(&self, source: Token, emitted: Token) -> bool {
        self.synonyms[source - 1].contains(&emitted)
    }

    /// Drift metric: greedy source→intermediate token accuracy on the
    /// held-out sources, counting any synonym as correct.
    pub fn drift_accuracy(&self, sender: &SeqPolicy) -> Result<f64> {
        let pairs: Vec<(Vec<Token>, Vec<Token>)> =
            self.eval_sources.iter().map(|src| (src.clone(), src.clone())).collect();
        // gold carries the source token; matching consults the synonym set
        greedy_token_accuracy(sender, &pairs, |_, got, source_tok| {
            self.is_valid_code(source_tok, got)
        })
    }

    /// Sequence BLEU of the greedy sender output against the canonical
    /// intermediate encoding (EOS stripped), aggregated over the corpus.
    pub fn drift_bleu(&self, sender: &SeqPolicy, max_n: usize) -> Result<f64> {
        let mut pairs = Vec::with_capacity(self.eval_sources.len());
        for src in &self.eval_sources {
            let mut decoded = sender.greedy_decode(src)?;
            decoded.retain(|t| *t != EOS);
            pairs.push((decoded, self.canonical_intermediate(src)));
        }
        Ok(corpus_bleu(&pairs, max_n))
    }

    /// Task metric: end-to-end greedy accuracy source→intermediate→target
    /// against the gold targets.
    pub fn task_accuracy(&self, sender: &SeqPolicy, receiver: &SeqPolicy) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for src in &self.eval_sources {
            let mut e = sender.greedy_decode(src)?;
            e.retain(|t| *t != EOS);
            let decoded = receiver.greedy_decode(&e)?;
            let gold = self.gold_targets(src);
            for (pos, &g) in gold.iter().enumerate() {
                total += 1;
                if decoded.get(pos) == Some(&g) {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / total.max(1) as f64)
    }

    /// Sender reward for one episode: exp of the receiver's mean gold-target
    /// log-likelihood given the emitted intermediate tokens. Dense, bounded
    /// in (0, 1], and equal to 1 exactly when the receiver decodes the gold
    /// sequence with certainty.
    pub fn sender_reward(
        &self,
        receiver: &SeqPolicy,
        src: &[Token],
        intermediate: &[Token],
    ) -> Result<f64> {
        let mut gold = self.gold_targets(src);
        gold.push(EOS);
        let lps = receiver.log_prob(intermediate, &gold)?;
        let mean = lps.iter().sum::<f64>() / lps.len() as f64;
        Ok(mean.exp())
    }

    /// Receiver training pairs for a batch of sampled episodes: the emitted
    /// intermediate tokens (EOS stripped) against gold targets.
    pub fn receiver_pairs(
        &self,
        episodes: &[(Vec<Token>, Vec<Token>)],
    ) -> Vec<(Vec<Token>, Vec<Token>)> {
        episodes
            .iter()
            .map(|(src, e)| {
                let mut prompt = e.clone();
                prompt.retain(|t| *t != EOS);
                let mut gold = self.gold_targets(src);
                gold.push(EOS);
                (prompt, gold)
            })
            .collect()
    }

    /// A seeded permutation of the full intermediate alphabet, for building
    /// drifted-code fixtures.
    pub fn code_permutation(&self, seed: u64) -> Vec<Token> {
        let mut perm: Vec<Token> = (0..self.sizes.vocab_size).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep EOS fixed, permute the rest
        shuffle(&mut perm[1..], &mut rng);
        perm
    }
}
