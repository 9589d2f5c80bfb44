//! Continuation task: complete a prefix of a reference-generated sequence
//! while maximizing a learned attribute score.
//!
//! The hidden attribute is the fraction of tokens from a designated
//! positive subset. A reward model is trained on median-split attribute
//! labels, so fresh reference samples score near 0.5. A tilted copy of the
//! generator is the planted solution: high attribute while staying inside
//! the reference support (low drift). Repeating a single positive token is
//! the planted hack: high attribute, far outside the support.

use super::generator::ReferenceGenerator;
use crate::error::{Error, Result};
use crate::rewardlab::{train_reward_model, LabeledSeq, RewardDataset, RewardKind, RewardModel, RewardModelConfig, RewardTrainReport};
use crate::seqpolicy::{PolicyConfig, SeqPolicy, Token, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Planted solutions must keep their perplexity on reference data within
/// this factor of the reference generator's own.
pub const PLANTED_PPL_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationSizes {
    /// Shared vocabulary size (id 0 is EOS).
    pub vocab_size: usize,
    /// Content tokens per reference sequence.
    pub seq_len: usize,
    /// Prompt prefix length given to the policy.
    pub prompt_len: usize,
    /// Allowed successors per token in the reference chain.
    pub branching: usize,
    /// Number of positive-attribute tokens.
    pub positive_count: usize,
    /// Positive-successor mass of positive-token rows / other rows.
    pub sticky_in: f64,
    pub sticky_out: f64,
    /// Tilt factors of the planted high-attribute generator (positive-token
    /// rows / negative-token rows).
    pub planted_tilt: f64,
    pub planted_escape_tilt: f64,
    pub corpus_size: usize,
    pub eval_corpus: usize,
    pub rm_examples: usize,
    pub rm_epochs: usize,
    pub prompt_pool: usize,
    pub eval_prompts: usize,
}

impl Default for ContinuationSizes {
    fn default() -> Self {
        ContinuationSizes {
            vocab_size: 24,
            seq_len: 12,
            prompt_len: 2,
            branching: 6,
            positive_count: 12,
            sticky_in: 0.84,
            sticky_out: 0.3,
            planted_tilt: 2.4,
            planted_escape_tilt: 3.0,
            corpus_size: 2048,
            eval_corpus: 64,
            rm_examples: 320,
            rm_epochs: 260,
            prompt_pool: 192,
            eval_prompts: 32,
        }
    }
}

/// The planted low-drift high-reward solution: the reference chain
/// reweighted on the event "positive-token count ≥ min_count". The two
/// weights are exact (the count distribution comes from dynamic
/// programming), so the planted distribution is normalized and its
/// per-token KL from the reference is known at construction.
#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub min_count: usize,
    pub w_good: f64,
    pub w_bad: f64,
    /// P(count ≥ min_count) under the planted distribution.
    pub good_fraction: f64,
    /// Exact per-token KL(reference ‖ planted).
    pub kl_per_token: f64,
}

pub struct PlantedSampler<'a> {
    base: &'a ReferenceGenerator,
    positive: &'a [bool],
    spec: &'a PlantedSpec,
}

impl PlantedSampler<'_> {
    fn count(&self, seq: &[Token]) -> usize {
        seq.iter().filter(|t| self.positive[**t]).count()
    }

    fn weight(&self, seq: &[Token]) -> f64 {
        if self.count(seq) >= self.spec.min_count {
            self.spec.w_good
        } else {
            self.spec.w_bad
        }
    }

    /// Rejection sampling against the base chain.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<Token> {
        let w_max = self.spec.w_good.max(self.spec.w_bad);
        loop {
            let seq = self.base.sample(rng);
            let accept = self.weight(&seq) / w_max;
            if rng.gen::<f64>() < accept {
                return seq;
            }
        }
    }

    pub fn log_prob(&self, seq: &[Token]) -> f64 {
        self.base.log_prob(seq) + self.weight(seq).ln()
    }

    pub fn perplexity_on(&self, corpus: &[Vec<Token>]) -> f64 {
        let mut nll = 0.0;
        let mut count = 0usize;
        for seq in corpus {
            nll -= self.log_prob(seq);
            count += seq.len();
        }
        (nll / count as f64).exp()
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationTask {
    pub sizes: ContinuationSizes,
    pub seed: u64,
    pub generator: ReferenceGenerator,
    /// Positive-attribute membership per token id.
    positive: Vec<bool>,
    /// Median reference attribute; labels are attribute > threshold.
    pub attr_threshold: f64,
    pub planted: PlantedSpec,
    pub reward_model: RewardModel,
    pub rm_report: RewardTrainReport,
    /// (prompt, continuation + EOS) pairs for pretraining.
    pub pretrain_data: Vec<(Vec<Token>, Vec<Token>)>,
    /// Held-out (prompt, continuation + EOS) pairs for the perplexity drift
    /// metric.
    pub eval_corpus: Vec<(Vec<Token>, Vec<Token>)>,
    pub train_prompts: Vec<Vec<Token>>,
    pub eval_prompts: Vec<Vec<Token>>,
}

pub fn build_continuation_task(seed: u64, sizes: ContinuationSizes) -> Result<ContinuationTask> {
    let s = &sizes;
    if s.vocab_size < 4 || s.seq_len < 2 {
        return Err(Error::TaskConstruction(format!(
            "vocab {} and seq_len {} below minimum sizes",
            s.vocab_size, s.seq_len
        )));
    }
    if s.prompt_len == 0 || s.prompt_len >= s.seq_len {
        return Err(Error::TaskConstruction("prompt must be shorter than the sequence".into()));
    }
    if s.positive_count == 0 || s.positive_count >= s.vocab_size - 1 {
        return Err(Error::TaskConstruction(
            "degenerate attribute: positive set must be a proper nonempty subset".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xd134_2543_de82_ef95).wrapping_add(1));

    // Positive tokens drawn from the content alphabet.
    let mut ids: Vec<Token> = (1..s.vocab_size).collect();
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let mut positive = vec![false; s.vocab_size];
    for &t in ids.iter().take(s.positive_count) {
        positive[t] = true;
    }

    // Sticky chain: positive tokens favor positive successors. The
    // attribute clusters into runs, reference sequences sit mid-scale, and
    // a mild in-support tilt saturates it (the planted solution).
    let generator = ReferenceGenerator::build_attributed(
        s.vocab_size,
        s.seq_len,
        s.branching,
        &positive,
        s.sticky_in,
        s.sticky_out,
        &mut rng,
    )?;

    // The attribute must vary inside the support: every transition row needs
    // reachable positive mass strictly between 0 and 1 on average.
    let mass = generator.mean_positive_mass(&positive);
    if mass <= 0.05 || mass >= 0.95 {
        return Err(Error::TaskConstruction(format!(
            "degenerate attribute: mean positive mass {mass:.3} is (nearly) constant over support"
        )));
    }

    let attribute = |seq: &[Token]| -> f64 {
        let pos = seq.iter().filter(|t| positive[**t]).count();
        pos as f64 / seq.len().max(1) as f64
    };

    // Label threshold: the midpoint between consecutive attribute values
    // that splits fresh reference samples closest to 50/50, so reference
    // sequences score near mid-scale under the trained model.
    let calib: Vec<f64> = (0..512).map(|_| attribute(&generator.sample(&mut rng))).collect();
    let mut sorted = calib.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let attr_threshold = sorted
        .windows(2)
        .map(|w| (w[0] + w[1]) / 2.0)
        .min_by_key(|t| {
            let above = calib.iter().filter(|a| **a > *t).count();
            (2 * above).abs_diff(calib.len())
        })
        .ok_or_else(|| {
            Error::TaskConstruction("degenerate attribute: reference samples share one value".into())
        })?;

    // Reward-model data: reference samples plus tilted/anti-tilted samples
    // for coverage off the reference distribution, all labeled by the
    // attribute threshold.
    let tilted = generator.tilted_by(&positive, s.planted_tilt, s.planted_escape_tilt);
    let anti = generator.tilted_by(&positive, 1.0 / s.planted_tilt, 1.0 / s.planted_escape_tilt);
    let mut rows = Vec::with_capacity(s.rm_examples);
    for i in 0..s.rm_examples {
        let seq = match i % 4 {
            0 | 1 => generator.sample(&mut rng),
            2 => tilted.sample(&mut rng),
            _ => anti.sample(&mut rng),
        };
        let label = attribute(&seq) > attr_threshold;
        rows.push(LabeledSeq { tokens: seq, label });
    }
    if rows.iter().all(|r| r.label) || rows.iter().all(|r| !r.label) {
        return Err(Error::TaskConstruction("degenerate attribute: labels are constant".into()));
    }

    let mut rm = RewardModel::init(
        RewardModelConfig::new(s.vocab_size, RewardKind::Classifier),
        &mut rng,
    );
    let rm_report =
        train_reward_model(&mut rm, &RewardDataset::Labeled(rows), s.rm_epochs, 0.01, &mut rng)?;

    // Planted solution: reweight the reference chain on the label-positive
    // event, spending at most a fixed fraction of the perplexity budget.
    // kl(α‖t) grows in t, so bisection finds the strongest admissible
    // conditioning.
    let planted = {
        let l = s.seq_len;
        let min_count = (0..=l)
            .find(|k| *k as f64 / l as f64 > attr_threshold)
            .unwrap_or(l);
        let dist = generator.positive_count_distribution(&positive);
        let alpha: f64 = dist[min_count..].iter().sum();
        if alpha <= 0.0 || alpha >= 1.0 {
            return Err(Error::TaskConstruction(format!(
                "degenerate attribute: label-positive mass {alpha:.3} under the reference"
            )));
        }
        let budget = 0.88 * l as f64 * (PLANTED_PPL_FACTOR).ln();
        let kl = |t: f64| alpha * (alpha / t).ln() + (1.0 - alpha) * ((1.0 - alpha) / (1.0 - t)).ln();
        let mut lo = alpha;
        let mut hi = 0.99;
        if kl(hi) > budget {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if kl(mid) <= budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        } else {
            lo = hi;
        }
        let t = lo;
        PlantedSpec {
            min_count,
            w_good: t / alpha,
            w_bad: (1.0 - t) / (1.0 - alpha),
            good_fraction: t,
            kl_per_token: kl(t) / l as f64,
        }
    };

    let split = |seq: Vec<Token>| -> (Vec<Token>, Vec<Token>) {
        let prompt = seq[..s.prompt_len].to_vec();
        let mut cont = seq[s.prompt_len..].to_vec();
        cont.push(EOS);
        (prompt, cont)
    };

    let pretrain_data: Vec<_> = (0..s.corpus_size).map(|_| split(generator.sample(&mut rng))).collect();
    let eval_corpus: Vec<_> = (0..s.eval_corpus).map(|_| split(generator.sample(&mut rng))).collect();
    let train_prompts: Vec<Vec<Token>> =
        (0..s.prompt_pool).map(|_| generator.sample(&mut rng)[..s.prompt_len].to_vec()).collect();
    let mut eval_prompts = Vec::with_capacity(s.eval_prompts);
    while eval_prompts.len() < s.eval_prompts {
        let p = generator.sample(&mut rng)[..s.prompt_len].to_vec();
        if !eval_prompts.contains(&p) {
            eval_prompts.push(p);
        }
    }

    Ok(ContinuationTask {
        sizes,
        seed,
        generator,
        positive,
        attr_threshold,
        planted,
        reward_model: rm,
        rm_report,
        pretrain_data,
        eval_corpus,
        train_prompts,
        eval_prompts,
    })
}

impl ContinuationTask {
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig::new(self.sizes.vocab_size, self.sizes.seq_len - self.sizes.prompt_len + 1)
    }

    /// Fraction of positive tokens in a content sequence.
    pub fn attribute(&self, content: &[Token]) -> f64 {
        let pos = content.iter().filter(|t| self.positive[**t]).count();
        pos as f64 / content.len().max(1) as f64
    }

    pub fn positive_tokens(&self) -> &[bool] {
        &self.positive
    }

    /// Task reward: the reward model's score of prompt + continuation
    /// (EOS stripped).
    pub fn reward(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        let mut seq = prompt.to_vec();
        seq.extend(response.iter().copied().filter(|t| *t != EOS));
        self.reward_model.score(&seq)
    }

    /// Mean reward-model score over fresh samples of a generator.
    pub fn mean_generator_reward(
        &self,
        generator: &ReferenceGenerator,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..samples {
            total += self.reward_model.score(&generator.sample(rng))?;
        }
        Ok(total / samples as f64)
    }

    /// The planted in-support high-reward solution.
    pub fn planted_solution(&self) -> PlantedSampler<'_> {
        PlantedSampler { base: &self.generator, positive: &self.positive, spec: &self.planted }
    }

    /// Mean reward-model score over fresh planted samples.
    pub fn mean_planted_reward(&self, samples: usize, rng: &mut impl Rng) -> Result<f64> {
        let planted = self.planted_solution();
        let mut total = 0.0;
        for _ in 0..samples {
            total += self.reward_model.score(&planted.sample(rng))?;
        }
        Ok(total / samples as f64)
    }

    /// The planted reward hack: one positive token repeated. Scores high
    /// and sits far outside the reference support.
    pub fn degenerate_sequence(&self) -> Vec<Token> {
        let tok = (1..self.sizes.vocab_size).find(|t| self.positive[*t]).expect("positive set nonempty");
        vec![tok; self.sizes.seq_len]
    }

    /// Perplexity of the policy on the held-out corpus (the drift metric).
    pub fn drift_perplexity(&self, policy: &SeqPolicy) -> Result<f64> {
        crate::evalkit::perplexity(policy, &self.eval_corpus)
    }
}
