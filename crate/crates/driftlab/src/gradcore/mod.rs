//! Minimal dense-tensor math with reverse-mode automatic differentiation,
//! sized for tiny sequence models.

#[cfg(test)]
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use ops::{log_softmax, log_softmax_masked, logsumexp, softmax, softmax_masked};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use crate::error::Result;

/// Central finite differences: entry i is (f(θ+εe_i) − f(θ−εe_i)) / 2ε.
///
/// Test oracle for every analytic gradient in the crate; it must stay
/// independent of the tape.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert!(eps > 0.0, "finite differences require eps > 0");
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let plus = f(&probe)?;
        probe[i] = theta[i] - eps;
        let minus = f(&probe)?;
        probe[i] = theta[i];
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// True when `got` matches `want` within `rel` relative tolerance,
/// falling back to `abs` near zero.
pub fn close(got: f64, want: f64, rel: f64, abs: f64) -> bool {
    let scale = got.abs().max(want.abs());
    (got - want).abs() <= abs.max(rel * scale)
}
