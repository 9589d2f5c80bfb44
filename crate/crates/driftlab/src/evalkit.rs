//! Evaluation mathematics: BLEU, perplexity, empirical KL to a reference
//! policy, and Pareto-frontier construction with dominance comparison.

use crate::error::{Error, Result};
use crate::gradcore::{log_softmax, softmax};
use crate::seqpolicy::{SeqPolicy, Token};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

// ---------------------------------------------------------------------------
// BLEU

/// Sentence BLEU on integer tokens: geometric mean of clipped n-gram
/// precisions for n = 1..max_n times the brevity penalty
/// exp(min(0, 1 − |ref|/|cand|)). Zero if any precision is zero; an empty
/// candidate scores 0 by convention. Single reference, no smoothing.
pub fn bleu(candidate: &[Token], reference: &[Token], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    assert!(!reference.is_empty(), "reference must be non-empty");
    corpus_bleu(&[(candidate.to_vec(), reference.to_vec())], max_n)
}

/// Corpus BLEU: n-gram counts aggregated over all pairs before the
/// geometric mean, as the standard does.
pub fn corpus_bleu(pairs: &[(Vec<Token>, Vec<Token>)], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in pairs {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=max_n {
            let (m, t) = clipped_ngram_matches(cand, reference, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_precision_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return 0.0;
        }
        log_precision_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let brevity = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    brevity * (log_precision_sum / max_n as f64).exp()
}

fn clipped_ngram_matches(cand: &[Token], reference: &[Token], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[Token], usize> = HashMap::new();
    if reference.len() >= n {
        for gram in reference.windows(n) {
            *ref_counts.entry(gram).or_insert(0) += 1;
        }
    }
    let mut cand_counts: HashMap<&[Token], usize> = HashMap::new();
    for gram in cand.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let matched = cand_counts
        .iter()
        .map(|(gram, c)| (*c).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len() - n + 1)
}

// ---------------------------------------------------------------------------
// Perplexity and empirical KL

/// exp of the mean per-token negative log-likelihood of `corpus` under the
/// policy. Each corpus entry is a (prompt, target) pair; the policy
/// conditions on the prompt and is scored on every target token.
pub fn perplexity(policy: &SeqPolicy, corpus: &[(Vec<Token>, Vec<Token>)]) -> Result<f64> {
    assert!(!corpus.is_empty(), "perplexity needs a non-empty corpus");
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (prompt, target) in corpus {
        let lps = policy.log_prob(prompt, target)?;
        nll -= lps.iter().sum::<f64>();
        tokens += lps.len();
    }
    Ok((nll / tokens as f64).exp())
}

/// Monte-Carlo KL estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KlEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Per-token KL(π‖π_ref) estimated over samples y ~ π: the mean of
/// (log π(y|x) − log π_ref(y|x)) / |y| across sampled responses.
pub fn empirical_kl(
    policy: &SeqPolicy,
    ref_policy: &SeqPolicy,
    prompts: &[Vec<Token>],
    samples_per_prompt: usize,
    rng: &mut impl Rng,
) -> Result<KlEstimate> {
    assert!(samples_per_prompt >= 1);
    assert!(!prompts.is_empty());
    let mut stats = Vec::with_capacity(prompts.len() * samples_per_prompt);
    for prompt in prompts {
        for _ in 0..samples_per_prompt {
            let traj = policy.sample(prompt, rng, 1.0)?;
            let lp_ref = ref_policy.log_prob(prompt, &traj.response)?;
            let ratio: f64 =
                traj.logp_online.iter().zip(&lp_ref).map(|(o, r)| o - r).sum();
            stats.push(ratio / traj.len() as f64);
        }
    }
    let n = stats.len();
    let mean = stats.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    Ok(KlEstimate { mean, stderr: (var / n as f64).sqrt(), samples: n })
}

// ---------------------------------------------------------------------------
// Pareto frontiers

/// Whether improvement on the drift metric means higher or lower scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftDirection {
    HigherIsBetter,
    LowerIsBetter,
}

impl DriftDirection {
    /// True when `a` is strictly better drift than `b`.
    pub fn strictly_better(self, a: f64, b: f64) -> bool {
        match self {
            DriftDirection::HigherIsBetter => a > b,
            DriftDirection::LowerIsBetter => a < b,
        }
    }

    /// Signed badness relative to a baseline: how much worse `value` is
    /// than `baseline` (positive = drifted away).
    pub fn badness(self, value: f64, baseline: f64) -> f64 {
        match self {
            DriftDirection::HigherIsBetter => baseline - value,
            DriftDirection::LowerIsBetter => value - baseline,
        }
    }
}

/// A (task score, drift score) measurement at a validation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub task_score: f64,
    pub drift_score: f64,
    pub step: usize,
    pub arm: String,
    pub seed: u64,
}

/// Point `q` dominates `p`: at least the same task score with strictly
/// better drift, or equal drift with a strictly higher task score.
pub fn dominates(q: &ParetoPoint, p: &ParetoPoint, direction: DriftDirection) -> bool {
    (q.task_score >= p.task_score && direction.strictly_better(q.drift_score, p.drift_score))
        || (q.drift_score == p.drift_score && q.task_score > p.task_score)
}

/// The non-dominated subset, sorted by task score ascending. Exact
/// coordinate duplicates collapse to the earliest step (then lowest seed),
/// so the result is invariant to input order and duplication.
pub fn pareto_frontier(points: &[ParetoPoint], direction: DriftDirection) -> Vec<ParetoPoint> {
    assert!(!points.is_empty(), "pareto_frontier needs at least one point");
    let mut kept: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p, direction)))
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        a.task_score
            .partial_cmp(&b.task_score)
            .unwrap()
            .then(a.drift_score.partial_cmp(&b.drift_score).unwrap())
            .then(a.step.cmp(&b.step))
            .then(a.seed.cmp(&b.seed))
            .then(a.arm.cmp(&b.arm))
    });
    kept.dedup_by(|a, b| a.task_score == b.task_score && a.drift_score == b.drift_score);
    kept
}

/// Best (frontier) drift achievable at task level at least `x`: the first
/// frontier point with task_score ≥ x. Step-function interpolation; `None`
/// beyond the frontier's best task score.
pub fn frontier_drift_at(frontier: &[ParetoPoint], x: f64) -> Option<f64> {
    frontier.iter().find(|p| p.task_score >= x).map(|p| p.drift_score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominanceVerdict {
    ADominates,
    BDominates,
    Incomparable,
}

/// A maximal task-score interval on which one arm's frontier is strictly
/// better. `winner` is "a" or "b".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossingInterval {
    pub lo: f64,
    pub hi: f64,
    pub winner: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceReport {
    pub verdict: DominanceVerdict,
    /// Task-score overlap of the two frontiers, when it exists.
    pub shared_range: Option<(f64, f64)>,
    /// Fraction of the shared range where each side is strictly better.
    pub a_better_fraction: f64,
    pub b_better_fraction: f64,
    /// Populated when the verdict is incomparable and both sides win
    /// somewhere: the intervals where each side leads.
    pub crossings: Vec<CrossingInterval>,
}

/// Compares two frontiers over the task-score range both achieve, with
/// step-function interpolation between frontier points. A side dominates
/// when it is at least as good everywhere on the shared range and strictly
/// better somewhere.
pub fn compare_arms(
    frontier_a: &[ParetoPoint],
    frontier_b: &[ParetoPoint],
    direction: DriftDirection,
) -> DominanceReport {
    assert!(!frontier_a.is_empty() && !frontier_b.is_empty());
    let (min_a, max_a) = (frontier_a[0].task_score, frontier_a.last().unwrap().task_score);
    let (min_b, max_b) = (frontier_b[0].task_score, frontier_b.last().unwrap().task_score);
    let lo = min_a.max(min_b);
    let hi = max_a.min(max_b);
    if hi < lo {
        return DominanceReport {
            verdict: DominanceVerdict::Incomparable,
            shared_range: None,
            a_better_fraction: 0.0,
            b_better_fraction: 0.0,
            crossings: Vec::new(),
        };
    }

    // Evaluation grid: both frontiers' task coordinates inside the shared
    // range, plus its endpoints. Both step functions are constant on each
    // (g_i, g_{i+1}] segment.
    let mut grid: Vec<f64> = frontier_a
        .iter()
        .chain(frontier_b.iter())
        .map(|p| p.task_score)
        .filter(|x| *x >= lo && *x <= hi)
        .chain([lo, hi])
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let mut a_len = 0.0;
    let mut b_len = 0.0;
    let mut segments: Vec<(f64, f64, i8)> = Vec::new();
    let mut compare_at = |x: f64| -> i8 {
        let da = frontier_drift_at(frontier_a, x).expect("x within shared range");
        let db = frontier_drift_at(frontier_b, x).expect("x within shared range");
        if direction.strictly_better(da, db) {
            1
        } else if direction.strictly_better(db, da) {
            -1
        } else {
            0
        }
    };

    if hi == lo {
        let sign = compare_at(lo);
        let (af, bf) = match sign {
            1 => (1.0, 0.0),
            -1 => (0.0, 1.0),
            _ => (0.0, 0.0),
        };
        return DominanceReport {
            verdict: verdict_from(af, bf),
            shared_range: Some((lo, hi)),
            a_better_fraction: af,
            b_better_fraction: bf,
            crossings: Vec::new(),
        };
    }

    for w in grid.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let sign = compare_at(x1);
        let len = x1 - x0;
        match sign {
            1 => a_len += len,
            -1 => b_len += len,
            _ => {}
        }
        match segments.last_mut() {
            Some((_, shi, ssign)) if *ssign == sign => *shi = x1,
            _ => segments.push((x0, x1, sign)),
        }
    }

    let total = hi - lo;
    let a_frac = a_len / total;
    let b_frac = b_len / total;
    let verdict = verdict_from(a_frac, b_frac);
    let crossings = if verdict == DominanceVerdict::Incomparable {
        segments
            .into_iter()
            .filter(|(_, _, s)| *s != 0)
            .map(|(lo, hi, s)| CrossingInterval {
                lo,
                hi,
                winner: if s > 0 { "a".into() } else { "b".into() },
            })
            .collect()
    } else {
        Vec::new()
    };
    DominanceReport {
        verdict,
        shared_range: Some((lo, hi)),
        a_better_fraction: a_frac,
        b_better_fraction: b_frac,
        crossings,
    }
}

fn verdict_from(a_frac: f64, b_frac: f64) -> DominanceVerdict {
    if a_frac > 0.0 && b_frac == 0.0 {
        DominanceVerdict::ADominates
    } else if b_frac > 0.0 && a_frac == 0.0 {
        DominanceVerdict::BDominates
    } else {
        DominanceVerdict::Incomparable
    }
}

/// ∫ frontier drift over [lo, hi] with step interpolation. `None` when the
/// frontier does not reach `hi`.
pub fn frontier_area(frontier: &[ParetoPoint], lo: f64, hi: f64) -> Option<f64> {
    if frontier.is_empty() || hi < lo {
        return None;
    }
    frontier_drift_at(frontier, hi)?;
    if hi == lo {
        return Some(0.0);
    }
    let mut grid: Vec<f64> = frontier
        .iter()
        .map(|p| p.task_score)
        .filter(|x| *x > lo && *x < hi)
        .chain([lo, hi])
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let mut area = 0.0;
    for w in grid.windows(2) {
        let drift = frontier_drift_at(frontier, w[1])?;
        area += drift * (w[1] - w[0]);
    }
    Some(area)
}

/// Means task and drift across seeds at each step (all series must share
/// the same evaluation grid). The result carries seed 0 as a placeholder;
/// it represents the cross-seed mean curve, not a run.
pub fn mean_curve(per_seed: &[Vec<ParetoPoint>]) -> Result<Vec<ParetoPoint>> {
    assert!(!per_seed.is_empty());
    let steps: Vec<usize> = per_seed[0].iter().map(|p| p.step).collect();
    for series in per_seed {
        let s: Vec<usize> = series.iter().map(|p| p.step).collect();
        if s != steps {
            return Err(Error::LengthMismatch(
                "per-seed series disagree on evaluation steps".into(),
            ));
        }
    }
    let n = per_seed.len() as f64;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, step)| ParetoPoint {
            task_score: per_seed.iter().map(|s| s[i].task_score).sum::<f64>() / n,
            drift_score: per_seed.iter().map(|s| s[i].drift_score).sum::<f64>() / n,
            step: *step,
            arm: per_seed[0][i].arm.clone(),
            seed: 0,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Nucleus (top-p) helper shared with masked decoding

/// Smallest set of tokens covering cumulative probability ≥ top_p, as a
/// boolean mask. Ties are broken by probability descending, then index
/// ascending, so the set is deterministic.
pub fn top_p_mask(probs: &[f64], top_p: f64) -> Vec<bool> {
    assert!(top_p > 0.0 && top_p <= 1.0);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut mask = vec![false; probs.len()];
    let mut cum = 0.0;
    for &i in &order {
        mask[i] = true;
        cum += probs[i];
        if cum >= top_p {
            break;
        }
    }
    mask
}

/// Next-token distribution of a policy at a prefix (softmax of its step
/// logits).
pub fn next_token_probs(policy: &SeqPolicy, prompt: &[Token], prefix: &[Token]) -> Result<Vec<f64>> {
    Ok(softmax(&policy.step_logits(prompt, prefix)?))
}

/// Log-probabilities of every next token at a prefix.
pub fn next_token_log_probs(
    policy: &SeqPolicy,
    prompt: &[Token],
    prefix: &[Token],
) -> Result<Vec<f64>> {
    Ok(log_softmax(&policy.step_logits(prompt, prefix)?))
}
