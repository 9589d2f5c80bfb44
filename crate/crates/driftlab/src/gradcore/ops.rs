//! Stabilized softmax-family helpers shared by the tape and by sampling.

/// log(Σ exp(z_i)) with the row max subtracted first, so finite logits can
/// never overflow or produce -inf.
pub fn logsumexp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    softmax_masked(z, None)
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    log_softmax_masked(z, None)
}

/// Softmax restricted to entries where `mask` is true; masked-out entries
/// get probability 0. A `None` mask means the full row.
pub fn softmax_masked(z: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for (i, v) in z.iter().enumerate() {
        if allowed(mask, i) && *v > m {
            m = *v;
        }
    }
    let mut out = vec![0.0; z.len()];
    let mut sum = 0.0;
    for (i, v) in z.iter().enumerate() {
        if allowed(mask, i) {
            let e = (v - m).exp();
            out[i] = e;
            sum += e;
        }
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Log-softmax with the same masking convention; masked-out entries are
/// -inf (they carry zero probability and are never picked).
pub fn log_softmax_masked(z: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for (i, v) in z.iter().enumerate() {
        if allowed(mask, i) && *v > m {
            m = *v;
        }
    }
    let mut sum = 0.0;
    for (i, v) in z.iter().enumerate() {
        if allowed(mask, i) {
            sum += (v - m).exp();
        }
    }
    let lse = m + sum.ln();
    z.iter()
        .enumerate()
        .map(|(i, v)| if allowed(mask, i) { v - lse } else { f64::NEG_INFINITY })
        .collect()
}

fn allowed(mask: Option<&[bool]>, i: usize) -> bool {
    mask.map_or(true, |m| m[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_sums_to_one_under_extreme_logits() {
        let p = softmax(&[1000.0, -1000.0, 999.0]);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_softmax_stays_finite() {
        let lp = log_softmax(&[800.0, -800.0]);
        assert!(lp[0].is_finite());
        assert!(lp[1].is_finite());
    }

    #[test]
    fn masked_softmax_renormalizes() {
        let p = softmax_masked(&[1.0, 2.0, 3.0], Some(&[true, false, true]));
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
