//! Reverse-mode autodiff on a linear tape.
//!
//! The primitive set is closed: embedding lookup, matmul, elementwise add,
//! tanh, log-softmax pick (cross-entropy), entropy of a softmax row, square,
//! and affine sums of scalars. Everything the policies and losses need is
//! composed from these, which keeps gradient checks exhaustive.

use super::ops::{log_softmax_masked, softmax_masked};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input tensor. Gradients are accumulated for leaves and retrievable
    /// after backward.
    Leaf,
    /// Row `row` of the 2-D table at `table`.
    Embed { table: NodeId, row: usize },
    /// `lhs` [m,k] times `rhs` [k,n] (or [k] treated as [k,1]).
    MatMul { lhs: NodeId, rhs: NodeId },
    Add { lhs: NodeId, rhs: NodeId },
    Tanh { arg: NodeId },
    /// log softmax(logits)[index]; `mask`, when present, restricts the
    /// distribution to the allowed entries before normalization.
    LogSoftmaxPick { logits: NodeId, index: usize, mask: Option<Vec<bool>> },
    /// Shannon entropy of softmax(logits), optionally masked.
    Entropy { logits: NodeId, mask: Option<Vec<bool>> },
    /// Elementwise square.
    Square { arg: NodeId },
    /// Sum of all elements, as a scalar.
    Sum { arg: NodeId },
    /// bias + sum of coeff * scalar-node.
    AffineSum { terms: Vec<(f64, NodeId)>, bias: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered record of primitive operations. Topological order equals
/// insertion order: every node's inputs precede it by construction.
/// Single-threaded; distinct tapes may live on distinct threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node, if it participated.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn embed(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embed",
                details: format!("table must be 2-D, got {:?}", t.shape()),
            });
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        if row >= rows {
            return Err(Error::EmbedIndex { index: row, rows });
        }
        let data = t.data()[row * cols..(row + 1) * cols].to_vec();
        let value = Tensor::new(vec![cols], data)?;
        Ok(self.push(Op::Embed { table, row }, value))
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(lhs).dims2();
        let (k2, n) = self.value(rhs).dims2();
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                details: format!(
                    "inner dimensions disagree: {:?} x {:?}",
                    self.value(lhs).shape(),
                    self.value(rhs).shape()
                ),
            });
        }
        let a = self.value(lhs).data();
        let b = self.value(rhs).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = a[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aik * b[kk * n + j];
                }
            }
        }
        // Vector rhs keeps a vector result; matrix rhs yields a matrix.
        let shape = if self.value(rhs).shape().len() <= 1 { vec![m] } else { vec![m, n] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::MatMul { lhs, rhs }, value))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        if self.value(lhs).numel() != self.value(rhs).numel() {
            return Err(Error::ShapeMismatch {
                op: "add",
                details: format!(
                    "{:?} vs {:?}",
                    self.value(lhs).shape(),
                    self.value(rhs).shape()
                ),
            });
        }
        let data: Vec<f64> = self
            .value(lhs)
            .data()
            .iter()
            .zip(self.value(rhs).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(lhs).shape().to_vec(), data)?;
        Ok(self.push(Op::Add { lhs, rhs }, value))
    }

    pub fn tanh(&mut self, arg: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(arg).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.value(arg).shape().to_vec(), data)?;
        Ok(self.push(Op::Tanh { arg }, value))
    }

    /// log softmax(logits)[index] as a scalar node (the per-token
    /// cross-entropy building block).
    pub fn log_softmax_pick(&mut self, logits: NodeId, index: usize) -> Result<NodeId> {
        self.log_softmax_pick_masked(logits, index, None)
    }

    pub fn log_softmax_pick_masked(
        &mut self,
        logits: NodeId,
        index: usize,
        mask: Option<Vec<bool>>,
    ) -> Result<NodeId> {
        let z = self.value(logits);
        let n = z.numel();
        if index >= n {
            return Err(Error::InvalidToken { token: index, vocab: n });
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "mask length {} vs logits length {}",
                    m.len(),
                    n
                )));
            }
            if !m[index] {
                return Err(Error::InvalidToken { token: index, vocab: n });
            }
        }
        let logp = log_softmax_masked(z.data(), mask.as_deref());
        let value = Tensor::scalar(logp[index])?;
        Ok(self.push(Op::LogSoftmaxPick { logits, index, mask }, value))
    }

    /// Entropy of softmax(logits) as a scalar node.
    pub fn entropy(&mut self, logits: NodeId) -> Result<NodeId> {
        self.entropy_masked(logits, None)
    }

    pub fn entropy_masked(&mut self, logits: NodeId, mask: Option<Vec<bool>>) -> Result<NodeId> {
        let z = self.value(logits);
        if let Some(m) = &mask {
            if m.len() != z.numel() {
                return Err(Error::LengthMismatch(format!(
                    "mask length {} vs logits length {}",
                    m.len(),
                    z.numel()
                )));
            }
        }
        let logp = log_softmax_masked(z.data(), mask.as_deref());
        let p = softmax_masked(z.data(), mask.as_deref());
        let h: f64 = p
            .iter()
            .zip(&logp)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, lpi)| -pi * lpi)
            .sum();
        let value = Tensor::scalar(h)?;
        Ok(self.push(Op::Entropy { logits, mask }, value))
    }

    pub fn square(&mut self, arg: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.value(arg).data().iter().map(|x| x * x).collect();
        let value = Tensor::new(self.value(arg).shape().to_vec(), data)?;
        Ok(self.push(Op::Square { arg }, value))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, arg: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(arg).data().iter().sum();
        let value = Tensor::scalar(s)?;
        Ok(self.push(Op::Sum { arg }, value))
    }

    /// bias + Σ coeff·node over scalar nodes.
    pub fn affine_sum(&mut self, terms: &[(f64, NodeId)], bias: f64) -> Result<NodeId> {
        let mut acc = bias;
        for (c, id) in terms {
            let v = self.value(*id);
            if !v.is_scalar() {
                return Err(Error::ShapeMismatch {
                    op: "affine_sum",
                    details: format!("term has shape {:?}, expected scalar", v.shape()),
                });
            }
            acc += c * v.item();
        }
        let value = Tensor::scalar(acc)?;
        Ok(self.push(Op::AffineSum { terms: terms.to_vec(), bias }, value))
    }

    /// Reverse pass from a scalar loss. Returns the gradient of the loss
    /// w.r.t. every node that participates in it (leaves included).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let gout = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::Embed { table, row } => {
                    let cols = gout.len();
                    let t = &self.nodes[table.0].value;
                    let g = grads[table.0].get_or_insert_with(|| vec![0.0; t.numel()]);
                    for (j, go) in gout.iter().enumerate() {
                        g[row * cols + j] += go;
                    }
                }
                Op::MatMul { lhs, rhs } => {
                    let (m, k) = self.nodes[lhs.0].value.dims2();
                    let (_, n) = self.nodes[rhs.0].value.dims2();
                    let a = self.nodes[lhs.0].value.data().to_vec();
                    let b = self.nodes[rhs.0].value.data().to_vec();
                    {
                        let ga = grads[lhs.0]
                            .get_or_insert_with(|| vec![0.0; m * k]);
                        // dA = dC · Bᵀ
                        for i in 0..m {
                            for kk in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += gout[i * n + j] * b[kk * n + j];
                                }
                                ga[i * k + kk] += acc;
                            }
                        }
                    }
                    {
                        let gb = grads[rhs.0]
                            .get_or_insert_with(|| vec![0.0; k * n]);
                        // dB = Aᵀ · dC
                        for kk in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += a[i * k + kk] * gout[i * n + j];
                                }
                                gb[kk * n + j] += acc;
                            }
                        }
                    }
                }
                Op::Add { lhs, rhs } => {
                    for side in [lhs, rhs] {
                        let g = grads[side.0]
                            .get_or_insert_with(|| vec![0.0; gout.len()]);
                        for (gi, go) in g.iter_mut().zip(&gout) {
                            *gi += go;
                        }
                    }
                }
                Op::Tanh { arg } => {
                    let y = self.nodes[idx].value.data().to_vec();
                    let g = grads[arg.0].get_or_insert_with(|| vec![0.0; y.len()]);
                    for ((gi, go), yi) in g.iter_mut().zip(&gout).zip(&y) {
                        *gi += go * (1.0 - yi * yi);
                    }
                }
                Op::LogSoftmaxPick { logits, index, mask } => {
                    let z = self.nodes[logits.0].value.data();
                    let p = softmax_masked(z, mask.as_deref());
                    let go = gout[0];
                    let g = grads[logits.0]
                        .get_or_insert_with(|| vec![0.0; p.len()]);
                    for (j, (gj, pj)) in g.iter_mut().zip(&p).enumerate() {
                        let indicator = if j == *index { 1.0 } else { 0.0 };
                        *gj += go * (indicator - pj);
                    }
                }
                Op::Entropy { logits, mask } => {
                    // dH/dz_j = -p_j (log p_j + H)
                    let z = self.nodes[logits.0].value.data();
                    let p = softmax_masked(z, mask.as_deref());
                    let logp = log_softmax_masked(z, mask.as_deref());
                    let h = self.nodes[idx].value.item();
                    let go = gout[0];
                    let g = grads[logits.0]
                        .get_or_insert_with(|| vec![0.0; p.len()]);
                    for ((gj, pj), lpj) in g.iter_mut().zip(&p).zip(&logp) {
                        if *pj > 0.0 {
                            *gj += go * (-pj * (lpj + h));
                        }
                    }
                }
                Op::Square { arg } => {
                    let x = self.nodes[arg.0].value.data().to_vec();
                    let g = grads[arg.0].get_or_insert_with(|| vec![0.0; x.len()]);
                    for ((gi, go), xi) in g.iter_mut().zip(&gout).zip(&x) {
                        *gi += go * 2.0 * xi;
                    }
                }
                Op::Sum { arg } => {
                    let n = self.nodes[arg.0].value.numel();
                    let go = gout[0];
                    let g = grads[arg.0].get_or_insert_with(|| vec![0.0; n]);
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                }
                Op::AffineSum { terms, bias: _ } => {
                    let go = gout[0];
                    for (c, id) in terms {
                        let g = grads[id.0].get_or_insert_with(|| vec![0.0; 1]);
                        g[0] += go * c;
                    }
                }
            }
        }

        // Gradients must stay finite for finite inputs.
        for g in grads.iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("backward pass".into()));
            }
        }
        Ok(Gradients { grads })
    }
}
