//! Finite-difference checks for every primitive op, at random small shapes.

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-4;
const ABS: f64 = 1e-7;
const EPS: f64 = 1e-5;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Checks analytic d(loss)/d(theta) against central differences, where
/// `build` constructs the loss graph from the flat buffer and returns the
/// leaf to differentiate plus the scalar loss node.
fn check<F>(theta: &[f64], build: F)
where
    F: Fn(&mut Tape, &[f64]) -> (NodeId, NodeId),
{
    let mut tape = Tape::new();
    let (leaf, loss) = build(&mut tape, theta);
    let grads = tape.backward(loss).unwrap();
    let analytic =
        grads.get(leaf).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; theta.len()]);

    let numeric = finite_diff_grad(
        |t| {
            let mut tape = Tape::new();
            let (_, loss) = build(&mut tape, t);
            Ok(tape.value(loss).item())
        },
        theta,
        EPS,
    )
    .unwrap();

    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        assert!(
            close(*a, *n, REL, ABS),
            "gradient mismatch at index {i}: analytic {a} vs numeric {n}"
        );
    }
}

#[test]
fn matmul_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..6 {
        let (m, k, n) = (r.gen_range(1..4usize), r.gen_range(1..4usize), r.gen_range(1..4usize));
        let a = rand_vec(&mut r, m * k);
        let b = rand_vec(&mut r, k * n);
        let (a2, b2) = (a.clone(), b.clone());
        check(&a, move |tape, t| {
            let lhs = tape.leaf(Tensor::matrix(m, k, t.to_vec()).unwrap());
            let rhs = tape.leaf(Tensor::matrix(k, n, b2.clone()).unwrap());
            let c = tape.matmul(lhs, rhs).unwrap();
            let sq = tape.square(c).unwrap();
            (lhs, tape.sum(sq).unwrap())
        });
        check(&b, move |tape, t| {
            let lhs = tape.leaf(Tensor::matrix(m, k, a2.clone()).unwrap());
            let rhs = tape.leaf(Tensor::matrix(k, n, t.to_vec()).unwrap());
            let c = tape.matmul(lhs, rhs).unwrap();
            let sq = tape.square(c).unwrap();
            (rhs, tape.sum(sq).unwrap())
        });
    }
}

#[test]
fn add_tanh_square_sum_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..6 {
        let n = r.gen_range(1..6usize);
        let x = rand_vec(&mut r, n);
        let y = rand_vec(&mut r, n);
        let y2 = y.clone();
        check(&x, move |tape, t| {
            let a = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            let b = tape.leaf(Tensor::vector(y2.clone()).unwrap());
            let s = tape.add(a, b).unwrap();
            let th = tape.tanh(s).unwrap();
            let sq = tape.square(th).unwrap();
            (a, tape.sum(sq).unwrap())
        });
    }
}

#[test]
fn embed_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..4 {
        let (rows, cols) = (r.gen_range(2..5usize), r.gen_range(1..4usize));
        let table = rand_vec(&mut r, rows * cols);
        let pick = r.gen_range(0..rows);
        check(&table, move |tape, t| {
            let tab = tape.leaf(Tensor::matrix(rows, cols, t.to_vec()).unwrap());
            let e = tape.embed(tab, pick).unwrap();
            let th = tape.tanh(e).unwrap();
            let sq = tape.square(th).unwrap();
            (tab, tape.sum(sq).unwrap())
        });
    }
}

#[test]
fn log_softmax_pick_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..6 {
        let n = r.gen_range(2..7usize);
        let z = rand_vec(&mut r, n);
        let pick = r.gen_range(0..n);
        check(&z, move |tape, t| {
            let logits = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            let lp = tape.log_softmax_pick(logits, pick).unwrap();
            (logits, lp)
        });
    }
}

#[test]
fn masked_log_softmax_pick_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..6 {
        let n = r.gen_range(3..7usize);
        let z = rand_vec(&mut r, n);
        let mut mask = vec![false; n];
        for m in mask.iter_mut() {
            *m = r.gen_bool(0.7);
        }
        let pick = r.gen_range(0..n);
        mask[pick] = true;
        let mask2 = mask.clone();
        check(&z, move |tape, t| {
            let logits = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            let lp = tape.log_softmax_pick_masked(logits, pick, Some(mask2.clone())).unwrap();
            (logits, lp)
        });
    }
}

#[test]
fn entropy_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..6 {
        let n = r.gen_range(2..7usize);
        let z = rand_vec(&mut r, n);
        check(&z, move |tape, t| {
            let logits = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            let h = tape.entropy(logits).unwrap();
            (logits, h)
        });
    }
}

#[test]
fn masked_entropy_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..4 {
        let n = r.gen_range(3..7usize);
        let z = rand_vec(&mut r, n);
        let mut mask = vec![false; n];
        for m in mask.iter_mut() {
            *m = r.gen_bool(0.6);
        }
        mask[0] = true;
        let mask2 = mask.clone();
        check(&z, move |tape, t| {
            let logits = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            let h = tape.entropy_masked(logits, Some(mask2.clone())).unwrap();
            (logits, h)
        });
    }
}

#[test]
fn affine_sum_gradient() {
    let mut r = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..4 {
        let n = r.gen_range(1..5usize);
        let x = rand_vec(&mut r, n);
        let coeffs: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let c2 = coeffs.clone();
        check(&x, move |tape, t| {
            let v = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            // One scalar pick per entry via square chains on 1-element sums.
            let mut terms = Vec::new();
            for (i, c) in c2.iter().enumerate() {
                let basis: Vec<f64> = (0..t.len()).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
                let e = tape.leaf(Tensor::matrix(1, t.len(), basis).unwrap());
                let picked = tape.matmul(e, v).unwrap();
                let sq = tape.square(picked).unwrap();
                let s = tape.sum(sq).unwrap();
                terms.push((*c, s));
            }
            let loss = tape.affine_sum(&terms, 0.7).unwrap();
            (v, loss)
        });
    }
}

#[test]
fn deep_composition_matches_finite_differences() {
    // A 4-parameter MLP-like composition: y = tanh(w·x + b), loss = (y - 1)^2.
    let mut r = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..4 {
        let theta = rand_vec(&mut r, 4);
        check(&theta, |tape, t| {
            let params = tape.leaf(Tensor::vector(t.to_vec()).unwrap());
            let w_pick = tape.leaf(Tensor::matrix(2, 4, vec![
                1.0, 0.0, 0.0, 0.0,
                0.0, 1.0, 0.0, 0.0,
            ]).unwrap());
            let b_pick = tape.leaf(Tensor::matrix(2, 4, vec![
                0.0, 0.0, 1.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
            ]).unwrap());
            let w = tape.matmul(w_pick, params).unwrap();
            let b = tape.matmul(b_pick, params).unwrap();
            let wx = tape.add(w, b).unwrap();
            let y = tape.tanh(wx).unwrap();
            let ones = tape.leaf(Tensor::vector(vec![-1.0, -1.0]).unwrap());
            let diff = tape.add(y, ones).unwrap();
            let sq = tape.square(diff).unwrap();
            (params, tape.sum(sq).unwrap())
        });
    }
}
