use crate::evalkit::*;
use crate::seqpolicy::{ParamScope, ParamVector, PolicyConfig, SeqPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pt(task: f64, drift: f64) -> ParetoPoint {
    ParetoPoint { task_score: task, drift_score: drift, step: 0, arm: "t".into(), seed: 0 }
}

fn pt_step(task: f64, drift: f64, step: usize) -> ParetoPoint {
    ParetoPoint { task_score: task, drift_score: drift, step, arm: "t".into(), seed: 0 }
}

// --- BLEU ------------------------------------------------------------------

/// Independent n-gram counter used as the BLEU oracle: counts every
/// candidate n-gram position whose gram still has unconsumed occurrences in
/// the reference.
fn brute_force_precision(cand: &[usize], reference: &[usize], n: usize) -> Option<(usize, usize)> {
    if cand.len() < n {
        return None;
    }
    let mut ref_grams: Vec<&[usize]> = if reference.len() >= n {
        reference.windows(n).collect()
    } else {
        Vec::new()
    };
    let mut hits = 0;
    for gram in cand.windows(n) {
        if let Some(pos) = ref_grams.iter().position(|g| *g == gram) {
            ref_grams.swap_remove(pos);
            hits += 1;
        }
    }
    Some((hits, cand.len() - n + 1))
}

fn brute_force_bleu(cand: &[usize], reference: &[usize], max_n: usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        match brute_force_precision(cand, reference, n) {
            Some((h, t)) if h > 0 && t > 0 => log_sum += (h as f64 / t as f64).ln(),
            _ => return 0.0,
        }
    }
    let bp = (1.0 - reference.len() as f64 / cand.len() as f64).min(0.0).exp();
    bp * (log_sum / max_n as f64).exp()
}

#[test]
fn bleu_perfect_match_is_one() {
    let s = vec![1, 2, 3, 4, 5];
    assert!((bleu(&s, &s, 4) - 1.0).abs() < 1e-12);
}

#[test]
fn bleu_disjoint_unigrams_is_zero() {
    assert_eq!(bleu(&[1, 2, 3], &[4, 5, 6], 2), 0.0);
}

#[test]
fn bleu_empty_candidate_is_zero() {
    assert_eq!(bleu(&[], &[1, 2], 2), 0.0);
}

#[test]
fn bleu_worked_example_with_brevity_penalty() {
    // candidate (1,2,3,4) vs reference (1,2,3,4,5), max_n = 2:
    // precisions 4/4 and 3/3, brevity exp(1 - 5/4).
    let got = bleu(&[1, 2, 3, 4], &[1, 2, 3, 4, 5], 2);
    let expected = (1.0f64 - 5.0 / 4.0).exp();
    assert!((got - expected).abs() < 1e-9);
    assert!((got - brute_force_bleu(&[1, 2, 3, 4], &[1, 2, 3, 4, 5], 2)).abs() < 1e-12);
}

#[test]
fn bleu_matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..200 {
        let clen = rng.gen_range(0..8);
        let rlen = rng.gen_range(1..8);
        let cand: Vec<usize> = (0..clen).map(|_| rng.gen_range(1..5)).collect();
        let reference: Vec<usize> = (0..rlen).map(|_| rng.gen_range(1..5)).collect();
        let max_n = rng.gen_range(1..4);
        let got = bleu(&cand, &reference, max_n);
        let want = brute_force_bleu(&cand, &reference, max_n);
        assert!((got - want).abs() < 1e-12, "cand {cand:?} ref {reference:?} n {max_n}");
    }
}

#[test]
fn shuffling_never_beats_the_unigram_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..50 {
        let len = rng.gen_range(3..8);
        let cand: Vec<usize> = (0..len).map(|_| rng.gen_range(1..6)).collect();
        let reference: Vec<usize> = (0..len).map(|_| rng.gen_range(1..6)).collect();
        let mut shuffled = cand.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let unigram_bound = bleu(&cand, &reference, 1);
        assert!(bleu(&shuffled, &reference, 2) <= unigram_bound + 1e-12);
    }
}

// --- Perplexity ------------------------------------------------------------

#[test]
fn uniform_policy_perplexity_equals_vocab_size() {
    let cfg = PolicyConfig { vocab_size: 10, embed_dim: 4, hidden_dim: 4, max_len: 8, value_head_detached: false };
    let policy = SeqPolicy::zeroed(cfg);
    let corpus = vec![(vec![], vec![1, 2, 3, 0]), (vec![], vec![4, 5, 0])];
    let ppl = perplexity(&policy, &corpus).unwrap();
    assert!((ppl - 10.0).abs() < 1e-9);
}

#[test]
fn near_deterministic_policy_perplexity_is_one() {
    // out_b pushed to +200 on token 1: probability ~1 on every step.
    let cfg = PolicyConfig { vocab_size: 4, embed_dim: 2, hidden_dim: 2, max_len: 8, value_head_detached: false };
    let mut policy = SeqPolicy::zeroed(cfg);
    let mut pv = policy.extract_params();
    let out_b = policy.layout().entries().iter().find(|e| e.name == "out_b").unwrap();
    pv.values[out_b.offset + 1] = 200.0;
    policy.load_params(&pv, ParamScope::All).unwrap();
    let corpus = vec![(vec![2], vec![1, 1, 1])];
    let ppl = perplexity(&policy, &corpus).unwrap();
    assert!((ppl - 1.0).abs() < 1e-9);
}

#[test]
fn perplexity_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let policy = SeqPolicy::init(PolicyConfig::new(6, 8), &mut rng);
    let corpus = vec![(vec![1], vec![2, 3, 0]), (vec![4, 5], vec![1, 0])];
    // Oracle: accumulate per-token NLL from the step distributions.
    let mut nll = 0.0;
    let mut count = 0;
    for (prompt, target) in &corpus {
        for (t, &tok) in target.iter().enumerate() {
            let lp = next_token_log_probs(&policy, prompt, &target[..t]).unwrap()[tok];
            nll -= lp;
            count += 1;
        }
    }
    let expected = (nll / count as f64).exp();
    let got = perplexity(&policy, &corpus).unwrap();
    assert!((got - expected).abs() < 1e-9);
}

// --- Empirical KL ----------------------------------------------------------

#[test]
fn identical_policies_have_kl_within_noise_of_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let policy = SeqPolicy::init(PolicyConfig::new(8, 6), &mut rng);
    let est = empirical_kl(&policy, &policy, &[vec![1], vec![2]], 50, &mut rng).unwrap();
    assert!(est.mean.abs() <= 3.0 * est.stderr + 1e-12);
    assert_eq!(est.samples, 100);
}

#[test]
fn binary_policy_kl_matches_closed_form() {
    // vocab 2, max_len 2: outcomes are [EOS] or [1, EOS(forced)].
    // Enumerate both outcomes to get the exact per-token KL.
    let cfg = PolicyConfig { vocab_size: 2, embed_dim: 2, hidden_dim: 2, max_len: 2, value_head_detached: false };
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let p = SeqPolicy::init(cfg.clone(), &mut rng);
    let q = SeqPolicy::init(cfg, &mut rng);
    let prompt: Vec<usize> = vec![1];

    // Exact expectation over the two outcomes. The EOS appended at max_len
    // is forced (sampling probability 1), but its recorded log-prob still
    // enters the per-token statistic, so the outcome weight is only the
    // first step's probability.
    let exact = {
        let lp_sum = |pol: &SeqPolicy, resp: &[usize]| {
            pol.log_prob(&prompt, resp).unwrap().iter().sum::<f64>()
        };
        let p_first = next_token_probs(&p, &prompt, &[]).unwrap();
        let stat = |resp: &[usize]| (lp_sum(&p, resp) - lp_sum(&q, resp)) / resp.len() as f64;
        p_first[0] * stat(&[0]) + p_first[1] * stat(&[1, 0])
    };

    let est = empirical_kl(&p, &q, &[prompt.clone()], 4000, &mut rng).unwrap();
    assert!(
        (est.mean - exact).abs() <= 3.0 * est.stderr,
        "estimate {} vs exact {} (se {})",
        est.mean,
        exact,
        est.stderr
    );
}

#[test]
fn standard_error_shrinks_at_monte_carlo_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(76);
    let p = SeqPolicy::init(PolicyConfig::new(6, 6), &mut rng);
    let q = SeqPolicy::init(PolicyConfig::new(6, 6), &mut rng);
    let small = empirical_kl(&p, &q, &[vec![1]], 100, &mut rng).unwrap();
    let large = empirical_kl(&p, &q, &[vec![1]], 10_000, &mut rng).unwrap();
    let ratio = large.stderr / small.stderr;
    assert!(ratio > 0.05 && ratio < 0.2, "ratio {ratio}");
}

// --- Pareto ----------------------------------------------------------------

fn brute_force_frontier(points: &[ParetoPoint], direction: DriftDirection) -> Vec<ParetoPoint> {
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
    });
    kept.dedup_by(|a, b| a.task_score == b.task_score && a.drift_score == b.drift_score);
    kept
}

#[test]
fn single_point_is_its_own_frontier() {
    let f = pareto_frontier(&[pt(1.0, 2.0)], DriftDirection::LowerIsBetter);
    assert_eq!(f.len(), 1);
}

#[test]
fn worked_dominance_example() {
    // (1,5) is dominated by (2,3): higher task, lower drift.
    let pts = vec![pt(1.0, 5.0), pt(2.0, 4.0), pt(2.0, 3.0)];
    let f = pareto_frontier(&pts, DriftDirection::LowerIsBetter);
    assert_eq!(f.len(), 1);
    assert_eq!((f[0].task_score, f[0].drift_score), (2.0, 3.0));
}

#[test]
fn every_excluded_point_is_dominated_by_a_frontier_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let n = rng.gen_range(1..25);
        let pts: Vec<ParetoPoint> = (0..n)
            .map(|i| pt_step(rng.gen_range(0..6) as f64, rng.gen_range(0..6) as f64, i))
            .collect();
        for direction in [DriftDirection::LowerIsBetter, DriftDirection::HigherIsBetter] {
            let f = pareto_frontier(&pts, direction);
            assert_eq!(f, brute_force_frontier(&pts, direction));
            for p in &pts {
                let on_frontier =
                    f.iter().any(|q| q.task_score == p.task_score && q.drift_score == p.drift_score);
                if !on_frontier {
                    assert!(f.iter().any(|q| dominates(q, p, direction)), "excluded {p:?} undominated");
                }
            }
        }
    }
}

#[test]
fn frontier_is_idempotent_and_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let mut pts: Vec<ParetoPoint> = (0..n)
            .map(|i| pt_step(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), i))
            .collect();
        let f1 = pareto_frontier(&pts, DriftDirection::LowerIsBetter);
        let f2 = pareto_frontier(&f1, DriftDirection::LowerIsBetter);
        assert_eq!(f1, f2);
        // duplicates and order changes leave the frontier unchanged
        let dup = pts.clone();
        pts.extend(dup);
        pts.reverse();
        let f3 = pareto_frontier(&pts, DriftDirection::LowerIsBetter);
        let coords = |f: &[ParetoPoint]| -> Vec<(f64, f64)> {
            f.iter().map(|p| (p.task_score, p.drift_score)).collect()
        };
        assert_eq!(coords(&f1), coords(&f3));
    }
}

#[test]
fn tie_breaking_keeps_earliest_step() {
    let pts = vec![pt_step(1.0, 1.0, 9), pt_step(1.0, 1.0, 2), pt_step(1.0, 1.0, 5)];
    let f = pareto_frontier(&pts, DriftDirection::LowerIsBetter);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].step, 2);
}

// --- compare_arms ----------------------------------------------------------

#[test]
fn identical_frontiers_are_incomparable_without_crossings() {
    let f = pareto_frontier(
        &[pt(1.0, 1.0), pt(2.0, 3.0), pt(3.0, 6.0)],
        DriftDirection::LowerIsBetter,
    );
    let rep = compare_arms(&f, &f, DriftDirection::LowerIsBetter);
    assert_eq!(rep.verdict, DominanceVerdict::Incomparable);
    assert!(rep.crossings.is_empty());
    assert_eq!(rep.a_better_fraction, 0.0);
    assert_eq!(rep.b_better_fraction, 0.0);
}

#[test]
fn shifted_frontier_dominates() {
    let base = pareto_frontier(
        &[pt(1.0, 1.0), pt(2.0, 3.0), pt(3.0, 6.0)],
        DriftDirection::LowerIsBetter,
    );
    let shifted: Vec<ParetoPoint> = base
        .iter()
        .map(|p| ParetoPoint { task_score: p.task_score + 1.0, ..p.clone() })
        .collect();
    let rep = compare_arms(&shifted, &base, DriftDirection::LowerIsBetter);
    assert_eq!(rep.verdict, DominanceVerdict::ADominates);
    let rep_rev = compare_arms(&base, &shifted, DriftDirection::LowerIsBetter);
    assert_eq!(rep_rev.verdict, DominanceVerdict::BDominates);
}

#[test]
fn crossing_frontiers_report_the_intersection() {
    // A is better at low task scores, B at high ones; the flip happens at
    // task = 2 (the last grid coordinate where A still leads).
    let a = pareto_frontier(&[pt(1.0, 1.0), pt(2.0, 2.0), pt(3.0, 9.0)], DriftDirection::LowerIsBetter);
    let b = pareto_frontier(&[pt(1.0, 4.0), pt(2.0, 5.0), pt(3.0, 6.0)], DriftDirection::LowerIsBetter);
    let rep = compare_arms(&a, &b, DriftDirection::LowerIsBetter);
    assert_eq!(rep.verdict, DominanceVerdict::Incomparable);
    assert!(rep.a_better_fraction > 0.0 && rep.b_better_fraction > 0.0);
    assert_eq!(rep.crossings.len(), 2);
    assert_eq!(rep.crossings[0].winner, "a");
    assert_eq!(rep.crossings[0].hi, 2.0);
    assert_eq!(rep.crossings[1].winner, "b");
    assert_eq!(rep.crossings[1].lo, 2.0);
}

#[test]
fn compare_arms_is_antisymmetric_on_random_frontiers() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    for _ in 0..50 {
        let mk = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(1..8);
            let pts: Vec<ParetoPoint> =
                (0..n).map(|i| pt_step(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), i)).collect();
            pareto_frontier(&pts, DriftDirection::LowerIsBetter)
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let ab = compare_arms(&a, &b, DriftDirection::LowerIsBetter);
        let ba = compare_arms(&b, &a, DriftDirection::LowerIsBetter);
        assert_eq!(ab.verdict == DominanceVerdict::ADominates, ba.verdict == DominanceVerdict::BDominates);
        assert_eq!(ab.verdict == DominanceVerdict::BDominates, ba.verdict == DominanceVerdict::ADominates);
    }
}

#[test]
fn frontier_area_integrates_the_step_function() {
    let f = pareto_frontier(
        &[pt(0.0, 1.0), pt(1.0, 2.0), pt(2.0, 4.0)],
        DriftDirection::LowerIsBetter,
    );
    // On (0,1]: drift 2; on (1,2]: drift 4 → area 6 over [0,2].
    let area = frontier_area(&f, 0.0, 2.0).unwrap();
    assert!((area - 6.0).abs() < 1e-12);
    assert!(frontier_area(&f, 0.0, 3.0).is_none());
}

// --- top-p -----------------------------------------------------------------

fn brute_force_top_p(probs: &[f64], top_p: f64) -> Vec<bool> {
    // Smallest covering set, preferring higher probability then lower index.
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut best: Option<Vec<usize>> = None;
    for k in 1..=probs.len() {
        let set: Vec<usize> = order[..k].to_vec();
        let sum: f64 = set.iter().map(|&i| probs[i]).sum();
        if sum >= top_p {
            best = Some(set);
            break;
        }
    }
    let mut mask = vec![false; probs.len()];
    for i in best.unwrap_or_else(|| order.clone()) {
        mask[i] = true;
    }
    mask
}

#[test]
fn top_p_one_keeps_everything() {
    let probs = vec![0.25, 0.25, 0.25, 0.25];
    assert_eq!(top_p_mask(&probs, 1.0), vec![true; 4]);
}

#[test]
fn dominant_token_is_the_whole_nucleus() {
    let probs = vec![0.95, 0.03, 0.02];
    assert_eq!(top_p_mask(&probs, 0.9), vec![true, false, false]);
}

#[test]
fn top_p_matches_brute_force_smallest_covering_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for _ in 0..200 {
        let n = rng.gen_range(1..10);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / sum).collect();
        let top_p = rng.gen_range(0.05..1.0);
        assert_eq!(top_p_mask(&probs, top_p), brute_force_top_p(&probs, top_p));
    }
}

// --- mean curve --------------------------------------------------------------

#[test]
fn mean_curve_averages_aligned_series() {
    let s1 = vec![pt_step(1.0, 2.0, 0), pt_step(2.0, 3.0, 10)];
    let s2 = vec![pt_step(3.0, 4.0, 0), pt_step(4.0, 5.0, 10)];
    let m = mean_curve(&[s1, s2]).unwrap();
    assert_eq!(m[0].task_score, 2.0);
    assert_eq!(m[0].drift_score, 3.0);
    assert_eq!(m[1].task_score, 3.0);
    assert_eq!(m[1].step, 10);
}

#[test]
fn mean_curve_rejects_misaligned_series() {
    let s1 = vec![pt_step(1.0, 2.0, 0)];
    let s2 = vec![pt_step(3.0, 4.0, 5)];
    assert!(mean_curve(&[s1, s2]).is_err());
}
