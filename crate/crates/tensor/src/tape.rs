//! Operation tape and reverse-mode gradient accumulation.
//!
//! A [`Var`] is a copyable handle to a node on a [`Tape`]. Ops validate
//! shapes eagerly and append one node each, so tape order is already a
//! topological order; [`Tape::backward`] walks it once in reverse.

use std::cell::RefCell;

use crate::tensor::{ew, mat_mat, mat_t_vec, mat_vec, outer, transpose2};
use crate::{Result, Scalar, Tensor, TensorError};

/// Log-probability assigned to masked-out softmax entries. Finite so that
/// `exp` underflows to exactly zero in both f32 and f64 without producing
/// NaN during backward.
const MASKED_LOG_PROB: f64 = -1.0e30;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Concat(Vec<usize>),
    StackRows(Vec<usize>),
    Slice {
        src: usize,
        start: usize,
    },
    Tanh(usize),
    Sigmoid(usize),
    Sum(usize),
    // The masked softmax needs no mask at backward time: masked outputs are
    // exactly zero, which already zeroes their gradient terms.
    SoftmaxMasked(usize),
    LogSoftmaxMasked {
        logits: usize,
        mask: Vec<bool>,
    },
    /// Row lookup into a rank-2 embedding table.
    EmbedRow {
        table: usize,
        row: usize,
    },
    /// Negative log-likelihood pick: `-log_probs[target]`.
    CrossEntropy {
        log_probs: usize,
        target: usize,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op,
}

/// Records operations for one forward pass; dropped after the update.
pub struct Tape<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<F>, op: Op) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Insert a constant or parameter value as a differentiable leaf.
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf)
    }

    /// Concatenate rank-1 vectors into one longer vector.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let mut data = Vec::new();
        let mut ids = Vec::with_capacity(parts.len());
        {
            let nodes = self.nodes.borrow();
            for part in parts {
                let v = &nodes[part.id].value;
                if v.rank() != 1 {
                    return Err(TensorError::UnsupportedShape {
                        op: "concat",
                        shape: v.shape().to_vec(),
                    });
                }
                data.extend_from_slice(v.data());
                ids.push(part.id);
            }
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(ids)))
    }

    /// Stack k rank-1 vectors of equal length d into a `[k, d]` matrix.
    pub fn stack_rows<'t>(&'t self, rows: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        if rows.is_empty() {
            return Err(TensorError::UnsupportedShape {
                op: "stack_rows",
                shape: vec![0],
            });
        }
        let mut data = Vec::new();
        let mut ids = Vec::with_capacity(rows.len());
        let mut width = None;
        {
            let nodes = self.nodes.borrow();
            for row in rows {
                let v = &nodes[row.id].value;
                if v.rank() != 1 || *width.get_or_insert(v.numel()) != v.numel() {
                    return Err(TensorError::UnsupportedShape {
                        op: "stack_rows",
                        shape: v.shape().to_vec(),
                    });
                }
                data.extend_from_slice(v.data());
                ids.push(row.id);
            }
        }
        let width = width.unwrap();
        Ok(self.push(
            Tensor::from_vec(vec![ids.len(), width], data)?,
            Op::StackRows(ids),
        ))
    }

    fn value_clone(&self, id: usize) -> Tensor<F> {
        self.nodes.borrow()[id].value.clone()
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<F>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn binary_same_shape(
        &self,
        op: &'static str,
        a: usize,
        b: usize,
        f: impl Fn(F, F) -> F,
    ) -> Result<Tensor<F>> {
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a].value, &nodes[b].value);
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        Ok(ew(x, y, f))
    }

    /// Reverse pass from a scalar loss; gradients sum over all paths.
    pub fn backward<'t>(&'t self, loss: Var<'t, F>) -> Result<Gradients<'t, F>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(loss_node.value.shape(), F::ONE));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, ew(&g, &nodes[*b].value, |gi, bi| gi * bi));
                    accumulate(&mut grads, *b, ew(&g, &nodes[*a].value, |gi, ai| gi * ai));
                }
                Op::Matmul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if bv.rank() == 1 {
                        accumulate(&mut grads, *a, outer(&g, bv));
                        accumulate(&mut grads, *b, mat_t_vec(av, &g));
                    } else {
                        accumulate(&mut grads, *a, mat_mat(&g, &transpose2(bv)));
                        accumulate(&mut grads, *b, mat_mat(&transpose2(av), &g));
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, transpose2(&g));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.numel();
                        let piece = Tensor::vector(g.data()[offset..offset + len].to_vec());
                        accumulate(&mut grads, p, piece);
                        offset += len;
                    }
                }
                Op::StackRows(rows) => {
                    let width = node.value.cols();
                    for (i, &r) in rows.iter().enumerate() {
                        let piece =
                            Tensor::vector(g.data()[i * width..(i + 1) * width].to_vec());
                        accumulate(&mut grads, r, piece);
                    }
                }
                Op::Slice { src, start } => {
                    let mut full = Tensor::zeros(nodes[*src].value.shape());
                    full.data_mut()[*start..*start + g.numel()].copy_from_slice(g.data());
                    accumulate(&mut grads, *src, full);
                }
                Op::Tanh(a) => {
                    accumulate(
                        &mut grads,
                        *a,
                        ew(&g, &node.value, |gi, yi| gi * (F::ONE - yi * yi)),
                    );
                }
                Op::Sigmoid(a) => {
                    accumulate(
                        &mut grads,
                        *a,
                        ew(&g, &node.value, |gi, yi| gi * yi * (F::ONE - yi)),
                    );
                }
                Op::Sum(a) => {
                    let gi = g.data()[0];
                    accumulate(
                        &mut grads,
                        *a,
                        Tensor::full(nodes[*a].value.shape(), gi),
                    );
                }
                Op::SoftmaxMasked(logits) => {
                    // dx_j = y_j * (g_j - sum_i g_i y_i); masked entries have
                    // y_j == 0 so they fall out without consulting the mask.
                    let y = &node.value;
                    let mut dot = F::ZERO;
                    for (gi, yi) in g.data().iter().zip(y.data()) {
                        dot += *gi * *yi;
                    }
                    let dx: Vec<F> = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gi, &yi)| yi * (gi - dot))
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::vector(dx));
                }
                Op::LogSoftmaxMasked { logits, mask } => {
                    // dx_j = g_j - p_j * sum_allowed g_i for allowed j, else 0.
                    let y = &node.value;
                    let mut gsum = F::ZERO;
                    for (i, &gi) in g.data().iter().enumerate() {
                        if mask[i] {
                            gsum += gi;
                        }
                    }
                    let dx: Vec<F> = (0..y.numel())
                        .map(|j| {
                            if mask[j] {
                                g.data()[j] - y.data()[j].exp() * gsum
                            } else {
                                F::ZERO
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::vector(dx));
                }
                Op::EmbedRow { table, row } => {
                    let mut full = Tensor::zeros(nodes[*table].value.shape());
                    let width = nodes[*table].value.cols();
                    full.data_mut()[row * width..(row + 1) * width].copy_from_slice(g.data());
                    accumulate(&mut grads, *table, full);
                }
                Op::CrossEntropy { log_probs, target } => {
                    let mut full = Tensor::zeros(nodes[*log_probs].value.shape());
                    full.data_mut()[*target] = -g.data()[0];
                    accumulate(&mut grads, *log_probs, full);
                }
            }
        }

        Ok(Gradients { tape: self, grads })
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], id: usize, g: Tensor<F>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<'t, F: Scalar> {
    tape: &'t Tape<F>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<'t, F: Scalar> Gradients<'t, F> {
    /// Gradient of the loss with respect to `v`; zeros when `v` lies on no
    /// path to the loss.
    pub fn get(&self, v: Var<'t, F>) -> Tensor<F> {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }
}

/// Handle to one tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Scalar> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Scalar> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

// Arithmetic lives on inherent methods (not the std operator traits)
// because every op is fallible and records onto the tape.
#[allow(clippy::should_implement_trait)]
impl<'t, F: Scalar> Var<'t, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn value(&self) -> Tensor<F> {
        self.tape.value_clone(self.id)
    }

    pub fn item(&self) -> Result<F> {
        self.tape.with_value(self.id, |v| v.item())
    }

    fn same_tape(&self, other: &Var<'t, F>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other);
        let v = self
            .tape
            .binary_same_shape("add", self.id, other.id, |a, b| a + b)?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other);
        let v = self
            .tape
            .binary_same_shape("sub", self.id, other.id, |a, b| a - b)?;
        Ok(self.tape.push(v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other);
        let v = self
            .tape
            .binary_same_shape("mul", self.id, other.id, |a, b| a * b)?;
        Ok(self.tape.push(v, Op::Mul(self.id, other.id)))
    }

    /// Matrix product: `[m,n]x[n,p] -> [m,p]` or `[m,n]x[n] -> [m]`.
    pub fn matmul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let out = match (a.rank(), b.rank()) {
            (2, 2) if a.cols() == b.rows() => mat_mat(a, b),
            (2, 1) if a.cols() == b.numel() => mat_vec(a, b),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                })
            }
        };
        drop(nodes);
        Ok(self.tape.push(out, Op::Matmul(self.id, other.id)))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(self) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            if v.rank() == 2 {
                Ok(transpose2(v))
            } else {
                Err(TensorError::UnsupportedShape {
                    op: "transpose",
                    shape: v.shape().to_vec(),
                })
            }
        })?;
        Ok(self.tape.push(v, Op::Transpose(self.id)))
    }

    /// Contiguous sub-vector `[start, start+len)` of a rank-1 tensor.
    pub fn slice(self, start: usize, len: usize) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            if v.rank() != 1 {
                return Err(TensorError::UnsupportedShape {
                    op: "slice",
                    shape: v.shape().to_vec(),
                });
            }
            if start + len > v.numel() {
                return Err(TensorError::IndexOutOfRange {
                    op: "slice",
                    index: start + len,
                    shape: v.shape().to_vec(),
                });
            }
            Ok(Tensor::vector(v.data()[start..start + len].to_vec()))
        })?;
        Ok(self.tape.push(v, Op::Slice {
            src: self.id,
            start,
        }))
    }

    pub fn tanh(self) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| v.map(F::tanh));
        Ok(self.tape.push(v, Op::Tanh(self.id)))
    }

    pub fn sigmoid(self) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            v.map(|x| {
                // Branch keeps exp from overflowing for large |x|.
                if x >= F::ZERO {
                    F::ONE / (F::ONE + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (F::ONE + e)
                }
            })
        });
        Ok(self.tape.push(v, Op::Sigmoid(self.id)))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(self) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            let mut acc = F::ZERO;
            for &x in v.data() {
                acc += x;
            }
            Tensor::scalar(acc)
        });
        Ok(self.tape.push(v, Op::Sum(self.id)))
    }

    /// Softmax over the entries where `mask` is true; masked entries get
    /// probability exactly zero (and zero gradient).
    pub fn softmax_masked(self, mask: &[bool]) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            check_mask("softmax_masked", v, mask)?;
            let mut max = F::NEG_INFINITY;
            for (i, &x) in v.data().iter().enumerate() {
                if mask[i] && x > max {
                    max = x;
                }
            }
            let mut exps = vec![F::ZERO; v.numel()];
            let mut total = F::ZERO;
            for (i, &x) in v.data().iter().enumerate() {
                if mask[i] {
                    let e = (x - max).exp();
                    exps[i] = e;
                    total += e;
                }
            }
            for e in &mut exps {
                *e = *e / total;
            }
            Ok(Tensor::vector(exps))
        })?;
        Ok(self.tape.push(v, Op::SoftmaxMasked(self.id)))
    }

    /// Log-softmax over unmasked entries; masked entries are pinned to a
    /// large negative constant and receive zero gradient.
    pub fn log_softmax_masked(self, mask: &[bool]) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            check_mask("log_softmax_masked", v, mask)?;
            let mut max = F::NEG_INFINITY;
            for (i, &x) in v.data().iter().enumerate() {
                if mask[i] && x > max {
                    max = x;
                }
            }
            let mut total = F::ZERO;
            for (i, &x) in v.data().iter().enumerate() {
                if mask[i] {
                    total += (x - max).exp();
                }
            }
            let lse = max + total.ln();
            let out: Vec<F> = (0..v.numel())
                .map(|i| {
                    if mask[i] {
                        v.data()[i] - lse
                    } else {
                        F::from_f64(MASKED_LOG_PROB)
                    }
                })
                .collect();
            Ok(Tensor::vector(out))
        })?;
        Ok(self.tape.push(v, Op::LogSoftmaxMasked {
            logits: self.id,
            mask: mask.to_vec(),
        }))
    }

    /// Row `row` of a rank-2 embedding table.
    pub fn row(self, row: usize) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            if v.rank() != 2 {
                return Err(TensorError::UnsupportedShape {
                    op: "embedding_lookup",
                    shape: v.shape().to_vec(),
                });
            }
            if row >= v.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_lookup",
                    index: row,
                    shape: v.shape().to_vec(),
                });
            }
            let width = v.cols();
            Ok(Tensor::vector(
                v.data()[row * width..(row + 1) * width].to_vec(),
            ))
        })?;
        Ok(self.tape.push(v, Op::EmbedRow {
            table: self.id,
            row,
        }))
    }

    /// Cross-entropy of a target id under a log-probability vector:
    /// `-log_probs[target]`, as a rank-0 scalar.
    pub fn cross_entropy(self, target: usize) -> Result<Var<'t, F>> {
        let v = self.tape.with_value(self.id, |v| {
            if v.rank() != 1 {
                return Err(TensorError::UnsupportedShape {
                    op: "cross_entropy",
                    shape: v.shape().to_vec(),
                });
            }
            if target >= v.numel() {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: target,
                    shape: v.shape().to_vec(),
                });
            }
            Ok(Tensor::scalar(-v.data()[target]))
        })?;
        Ok(self.tape.push(v, Op::CrossEntropy {
            log_probs: self.id,
            target,
        }))
    }
}

fn check_mask<F: Scalar>(op: &'static str, v: &Tensor<F>, mask: &[bool]) -> Result<()> {
    if v.rank() != 1 {
        return Err(TensorError::UnsupportedShape {
            op,
            shape: v.shape().to_vec(),
        });
    }
    if mask.len() != v.numel() {
        return Err(TensorError::MaskLength {
            op,
            mask: mask.len(),
            len: v.numel(),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::EmptyMask { op });
    }
    Ok(())
}
