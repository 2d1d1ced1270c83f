//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every differentiable value lives on a [`Tape`] as a node holding its value
//! and the primitive that produced it. Values that do not depend on any
//! gradient-requiring leaf are plain constants and never touch the tape.
//!
//! Backward formulas are written with the same [`Tensor`] operations as the
//! forward pass. With `create_graph` set, the backward pass therefore records
//! its own nodes and the returned gradients can be differentiated again, which
//! is what second-order meta-gradients need. Without it, the backward pass
//! runs on detached values and records nothing.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// An operand as stored in a recorded op: its value, plus the node id when it
/// is tracked on the tape.
#[derive(Clone)]
struct Operand {
    id: Option<NodeId>,
    value: Rc<Matrix>,
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Operand, Operand),
    Transpose(Operand),
    Add(Operand, Operand),
    Sub(Operand, Operand),
    Mul(Operand, Operand),
    Scale(Operand, f64),
    SumRows(Operand),
    SumCols(Operand),
    Expand(Operand),
    Tanh(Operand),
    Relu(Operand),
    Exp(Operand),
    LogSoftmax(Operand),
    Nll(Operand, Rc<[usize]>),
    ConcatRows(Vec<Operand>),
    SelectRows(Operand, Rc<[usize]>),
    ScatterRows(Operand, Rc<[usize]>),
    SelectCols(Operand, Rc<[usize]>),
    ScatterCols(Operand, Rc<[usize]>),
}

impl Op {
    fn operands(&self) -> Vec<&Operand> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::ConcatRows(parts) => parts.iter().collect(),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Expand(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::LogSoftmax(a)
            | Op::Nll(a, _)
            | Op::SelectRows(a, _)
            | Op::ScatterRows(a, _)
            | Op::SelectCols(a, _)
            | Op::ScatterCols(a, _) => vec![a],
        }
    }
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    accumulated: BTreeMap<NodeId, Matrix>,
}

/// Ordered record of primitive ops. Cheap to clone; clones share the record.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that requires gradients.
    pub fn leaf(&self, value: Matrix) -> Result<Tensor> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push(Rc::new(value), Op::Leaf))
    }

    fn push(&self, value: Rc<Matrix>, op: Op) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::clone(&value),
            op,
        });
        Tensor {
            value,
            node: Some((self.clone(), id)),
        }
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Accumulates `d loss / d leaf` into every leaf's gradient buffer.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        let leaves: Vec<Tensor> = {
            let Some(loss_id) = loss.id_on(self)? else {
                return Ok(());
            };
            let inner = self.inner.borrow();
            inner.nodes[..=loss_id]
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n.op, Op::Leaf))
                .map(|(id, n)| Tensor {
                    value: Rc::clone(&n.value),
                    node: Some((self.clone(), id)),
                })
                .collect()
        };
        let refs: Vec<&Tensor> = leaves.iter().collect();
        let grads = grad(loss, &refs, false)?;
        let mut inner = self.inner.borrow_mut();
        for (leaf, g) in leaves.iter().zip(grads) {
            let id = leaf.node.as_ref().map(|(_, id)| *id).unwrap_or_default();
            let slot = inner.accumulated.entry(id);
            match slot {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert((*g.value).clone());
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    let sum = o
                        .get()
                        .zip_broadcast(&g.value, "accumulate", |a, b| a + b)?;
                    o.insert(sum);
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().accumulated.clear();
    }
}

/// A value, optionally tracked on a tape.
#[derive(Clone)]
pub struct Tensor {
    value: Rc<Matrix>,
    node: Option<(Tape, NodeId)>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &self.value.data())
            .finish()
    }
}

impl Tensor {
    /// An untracked value.
    pub fn constant(value: Matrix) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Matrix::scalar(value))
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn to_matrix(&self) -> Matrix {
        (*self.value).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self {
            value: Rc::clone(&self.value),
            node: None,
        }
    }

    /// Gradient accumulated by [`Tape::backward`], if any.
    pub fn grad(&self) -> Option<Matrix> {
        let (tape, id) = self.node.as_ref()?;
        tape.inner.borrow().accumulated.get(id).cloned()
    }

    /// The scalar value of a `1 × 1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::NotScalar(self.shape()));
        }
        Ok(self.value.data()[0])
    }

    fn id_on(&self, tape: &Tape) -> Result<Option<NodeId>> {
        match &self.node {
            None => Ok(None),
            Some((t, id)) if t.same(tape) => Ok(Some(*id)),
            Some(_) => Err(Error::TapeMismatch),
        }
    }

    fn operand(&self) -> Operand {
        Operand {
            id: self.node.as_ref().map(|(_, id)| *id),
            value: Rc::clone(&self.value),
        }
    }

    /// Records `op` producing `value` on the shared tape of `inputs`, or
    /// returns a constant when no input is tracked.
    fn record(op_name: &'static str, inputs: &[&Tensor], value: Matrix, op: Op) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let mut tape: Option<&Tape> = None;
        for t in inputs.iter().filter_map(|t| t.tape()) {
            match tape {
                None => tape = Some(t),
                Some(prev) if !prev.same(t) => return Err(Error::TapeMismatch),
                Some(_) => {}
            }
        }
        Ok(match tape {
            Some(t) => t.push(Rc::new(value), op),
            None => Self::constant(value),
        })
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let v = self.value.matmul(&rhs.value)?;
        Self::record(
            "matmul",
            &[self, rhs],
            v,
            Op::MatMul(self.operand(), rhs.operand()),
        )
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let v = self.value.transpose();
        Self::record("transpose", &[self], v, Op::Transpose(self.operand()))
    }

    /// Elementwise sum; a `1 × c` or `r × 1` operand broadcasts.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let v = self.value.zip_broadcast(&rhs.value, "add", |a, b| a + b)?;
        Self::record(
            "add",
            &[self, rhs],
            v,
            Op::Add(self.operand(), rhs.operand()),
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let v = self.value.zip_broadcast(&rhs.value, "sub", |a, b| a - b)?;
        Self::record(
            "sub",
            &[self, rhs],
            v,
            Op::Sub(self.operand(), rhs.operand()),
        )
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let v = self.value.zip_broadcast(&rhs.value, "mul", |a, b| a * b)?;
        Self::record(
            "mul",
            &[self, rhs],
            v,
            Op::Mul(self.operand(), rhs.operand()),
        )
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let v = self.value.scale(factor);
        Self::record("scale", &[self], v, Op::Scale(self.operand(), factor))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// Sum over rows, giving `1 × cols`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let v = self.value.sum_rows();
        Self::record("sum_rows", &[self], v, Op::SumRows(self.operand()))
    }

    /// Sum over columns, giving `rows × 1`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let v = self.value.sum_cols();
        Self::record("sum_cols", &[self], v, Op::SumCols(self.operand()))
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.sum_rows()?.sum_cols()
    }

    pub fn mean_rows(&self) -> Result<Tensor> {
        let n = self.shape().0;
        if n == 0 {
            return Err(Error::InvalidArgument("mean of zero rows".into()));
        }
        self.sum_rows()?.scale(1.0 / n as f64)
    }

    /// Broadcasts a `1 × c`, `r × 1` or `1 × 1` tensor to `shape`.
    pub fn expand(&self, shape: (usize, usize)) -> Result<Tensor> {
        let zeros = Matrix::zeros(shape.0, shape.1);
        let v = self.value.zip_broadcast(&zeros, "expand", |a, _| a)?;
        if v.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "expand",
                lhs: self.shape(),
                rhs: shape,
            });
        }
        Self::record("expand", &[self], v, Op::Expand(self.operand()))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let v = self.value.map(f64::tanh);
        Self::record("tanh", &[self], v, Op::Tanh(self.operand()))
    }

    pub fn relu(&self) -> Result<Tensor> {
        let v = self.value.map(|x| x.max(0.0));
        Self::record("relu", &[self], v, Op::Relu(self.operand()))
    }

    pub fn exp(&self) -> Result<Tensor> {
        let v = self.value.map(f64::exp);
        Self::record("exp", &[self], v, Op::Exp(self.operand()))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let (rows, cols) = self.shape();
        if cols == 0 {
            return Err(Error::InvalidArgument(
                "log_softmax over zero columns".into(),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = self.value.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let v = Matrix::new(rows, cols, data)?;
        Self::record("log_softmax", &[self], v, Op::LogSoftmax(self.operand()))
    }

    /// Mean negative log-likelihood of `targets` under row-wise
    /// log-probabilities.
    pub fn nll_loss(&self, targets: &[usize]) -> Result<Tensor> {
        let (rows, cols) = self.shape();
        if targets.len() != rows || rows == 0 {
            return Err(Error::ShapeMismatch {
                op: "nll_loss",
                lhs: self.shape(),
                rhs: (targets.len(), 1),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::InvalidArgument(format!(
                "target class {bad} out of range for {cols} classes"
            )));
        }
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| self.value.get(r, t))
            .sum();
        let v = Matrix::scalar(-total / rows as f64);
        Self::record(
            "nll_loss",
            &[self],
            v,
            Op::Nll(self.operand(), targets.into()),
        )
    }

    /// Cross-entropy of raw logits against class targets.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        self.log_softmax()?.nll_loss(targets)
    }

    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let cols = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of no tensors".into()))?
            .shape()
            .1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.shape().1 != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            rows += p.shape().0;
            data.extend_from_slice(p.value.data());
        }
        let v = Matrix::new(rows, cols, data)?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        let op = Op::ConcatRows(parts.iter().map(Tensor::operand).collect());
        Self::record("concat_rows", &refs, v, op)
    }

    /// Gathers rows by index (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let v = self.value.select_rows(idx)?;
        Self::record(
            "select_rows",
            &[self],
            v,
            Op::SelectRows(self.operand(), idx.into()),
        )
    }

    /// Gathers columns by index (repeats allowed).
    pub fn select_cols(&self, idx: &[usize]) -> Result<Tensor> {
        let v = self.value.select_cols(idx)?;
        Self::record(
            "select_cols",
            &[self],
            v,
            Op::SelectCols(self.operand(), idx.into()),
        )
    }

    /// Adjoint of [`Tensor::select_rows`]: adds row `k` into row `idx[k]` of
    /// an `n_rows`-row zero matrix.
    fn scatter_rows(&self, idx: Rc<[usize]>, n_rows: usize) -> Result<Tensor> {
        let cols = self.shape().1;
        let mut out = Matrix::zeros(n_rows, cols);
        for (k, &i) in idx.iter().enumerate() {
            for c in 0..cols {
                let cur = out.get(i, c);
                out.set(i, c, cur + self.value.get(k, c));
            }
        }
        Self::record(
            "scatter_rows",
            &[self],
            out,
            Op::ScatterRows(self.operand(), idx),
        )
    }

    fn scatter_cols(&self, idx: Rc<[usize]>, n_cols: usize) -> Result<Tensor> {
        let rows = self.shape().0;
        let mut out = Matrix::zeros(rows, n_cols);
        for r in 0..rows {
            for (k, &c) in idx.iter().enumerate() {
                let cur = out.get(r, c);
                out.set(r, c, cur + self.value.get(r, k));
            }
        }
        Self::record(
            "scatter_cols",
            &[self],
            out,
            Op::ScatterCols(self.operand(), idx),
        )
    }

    /// Pairwise squared Euclidean distances between the rows of `self`
    /// (`n × d`) and `other` (`m × d`), giving `n × m`.
    pub fn sq_euclidean(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().1 != other.shape().1 {
            return Err(Error::ShapeMismatch {
                op: "sq_euclidean",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let a_sq = self.mul(self)?.sum_cols()?;
        let b_sq = other.mul(other)?.sum_cols()?.transpose()?;
        let cross = self.matmul(&other.transpose()?)?.scale(2.0)?;
        a_sq.add(&b_sq)?.sub(&cross)
    }

    /// Sums a broadcast gradient back down to `shape`.
    fn reduce_to(&self, shape: (usize, usize)) -> Result<Tensor> {
        let mut g = self.clone();
        if shape.0 == 1 && g.shape().0 != 1 {
            g = g.sum_rows()?;
        }
        if shape.1 == 1 && g.shape().1 != 1 {
            g = g.sum_cols()?;
        }
        Ok(g)
    }
}

/// Gradients of a scalar `loss` with respect to each tensor in `wrt`.
///
/// Each `wrt` tensor is treated as an independent input: when one of them was
/// computed from another, the path through it is not followed, so every
/// result is a partial derivative. Tensors that `loss` does not depend on get
/// a zero gradient. With `create_graph`, the returned gradients are tracked
/// and can themselves be differentiated.
pub fn grad(loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.shape() != (1, 1) {
        return Err(Error::NotScalar(loss.shape()));
    }
    let zeros = || {
        wrt.iter()
            .map(|t| Tensor::constant(Matrix::zeros(t.shape().0, t.shape().1)))
            .collect()
    };
    let Some((tape, loss_id)) = loss.node.clone() else {
        return Ok(zeros());
    };
    let mut targets = Vec::with_capacity(wrt.len());
    for t in wrt {
        let id = t.id_on(&tape)?;
        targets.push(id.filter(|&i| i <= loss_id));
    }
    let Some(start) = targets.iter().flatten().copied().min() else {
        return Ok(zeros());
    };

    // needs[i - start]: node i lies on a path from some target to the loss.
    let span = loss_id + 1 - start;
    let mut needs = vec![false; span];
    for id in targets.iter().flatten() {
        needs[id - start] = true;
    }
    {
        let inner = tape.inner.borrow();
        for id in start..=loss_id {
            if needs[id - start] {
                continue;
            }
            needs[id - start] = inner.nodes[id]
                .op
                .operands()
                .iter()
                .any(|o| o.id.is_some_and(|i| i >= start && needs[i - start]));
        }
    }
    if !needs[loss_id - start] {
        return Ok(zeros());
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; span];
    grads[loss_id - start] = Some(Tensor::scalar(1.0));
    let mut results: Vec<Option<Tensor>> = vec![None; span];
    let is_target: Vec<bool> = {
        let mut v = vec![false; span];
        for id in targets.iter().flatten() {
            v[id - start] = true;
        }
        v
    };

    for id in (start..=loss_id).rev() {
        let Some(g) = grads[id - start].take() else {
            continue;
        };
        if is_target[id - start] {
            results[id - start] = Some(g);
            continue;
        }
        let (op, value) = {
            let inner = tape.inner.borrow();
            let node = &inner.nodes[id];
            (node.op.clone(), Rc::clone(&node.value))
        };
        if matches!(op, Op::Leaf) {
            continue;
        }
        let this = if create_graph {
            Tensor {
                value,
                node: Some((tape.clone(), id)),
            }
        } else {
            Tensor { value, node: None }
        };
        let g = if create_graph { g } else { g.detach() };
        let view = |o: &Operand| -> Tensor {
            match o.id {
                Some(i) if create_graph => Tensor {
                    value: Rc::clone(&o.value),
                    node: Some((tape.clone(), i)),
                },
                _ => Tensor {
                    value: Rc::clone(&o.value),
                    node: None,
                },
            }
        };
        let wanted = |o: &Operand| o.id.is_some_and(|i| i >= start && needs[i - start]);

        let mut contribs: Vec<(NodeId, Tensor)> = Vec::new();
        let mut push = |o: &Operand, t: Tensor| {
            if let Some(i) = o.id {
                contribs.push((i, t));
            }
        };
        match &op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                if wanted(a) {
                    push(a, g.matmul(&view(b).transpose()?)?);
                }
                if wanted(b) {
                    push(b, view(a).transpose()?.matmul(&g)?);
                }
            }
            Op::Transpose(a) => {
                if wanted(a) {
                    push(a, g.transpose()?);
                }
            }
            Op::Add(a, b) => {
                if wanted(a) {
                    push(a, g.reduce_to(a.value.shape())?);
                }
                if wanted(b) {
                    push(b, g.reduce_to(b.value.shape())?);
                }
            }
            Op::Sub(a, b) => {
                if wanted(a) {
                    push(a, g.reduce_to(a.value.shape())?);
                }
                if wanted(b) {
                    push(b, g.neg()?.reduce_to(b.value.shape())?);
                }
            }
            Op::Mul(a, b) => {
                if wanted(a) {
                    push(a, g.mul(&view(b))?.reduce_to(a.value.shape())?);
                }
                if wanted(b) {
                    push(b, g.mul(&view(a))?.reduce_to(b.value.shape())?);
                }
            }
            Op::Scale(a, f) => {
                if wanted(a) {
                    push(a, g.scale(*f)?);
                }
            }
            Op::SumRows(a) | Op::SumCols(a) => {
                if wanted(a) {
                    push(a, g.expand(a.value.shape())?);
                }
            }
            Op::Expand(a) => {
                if wanted(a) {
                    push(a, g.reduce_to(a.value.shape())?);
                }
            }
            Op::Tanh(a) => {
                if wanted(a) {
                    let one = Tensor::scalar(1.0);
                    let deriv = one.sub(&this.mul(&this)?)?;
                    push(a, g.mul(&deriv)?);
                }
            }
            Op::Relu(a) => {
                if wanted(a) {
                    let mask = a.value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    push(a, g.mul(&Tensor::constant(mask))?);
                }
            }
            Op::Exp(a) => {
                if wanted(a) {
                    push(a, g.mul(&this)?);
                }
            }
            Op::LogSoftmax(a) => {
                if wanted(a) {
                    let probs = this.exp()?;
                    let row_sums = g.sum_cols()?;
                    push(a, g.sub(&probs.mul(&row_sums)?)?);
                }
            }
            Op::Nll(a, targets) => {
                if wanted(a) {
                    let (rows, cols) = a.value.shape();
                    let mut coef = Matrix::zeros(rows, cols);
                    for (r, &t) in targets.iter().enumerate() {
                        coef.set(r, t, -1.0 / rows as f64);
                    }
                    push(a, Tensor::constant(coef).mul(&g)?);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = p.value.rows();
                    if wanted(p) {
                        let idx: Vec<usize> = (offset..offset + n).collect();
                        push(p, g.select_rows(&idx)?);
                    }
                    offset += n;
                }
            }
            Op::SelectRows(a, idx) => {
                if wanted(a) {
                    push(a, g.scatter_rows(Rc::clone(idx), a.value.rows())?);
                }
            }
            Op::ScatterRows(a, idx) => {
                if wanted(a) {
                    push(a, g.select_rows(idx)?);
                }
            }
            Op::SelectCols(a, idx) => {
                if wanted(a) {
                    push(a, g.scatter_cols(Rc::clone(idx), a.value.cols())?);
                }
            }
            Op::ScatterCols(a, idx) => {
                if wanted(a) {
                    push(a, g.select_cols(idx)?);
                }
            }
        }

        for (input, contrib) in contribs {
            let slot = &mut grads[input - start];
            *slot = Some(match slot.take() {
                None => contrib,
                Some(prev) => prev.add(&contrib)?,
            });
        }
    }

    Ok(wrt
        .iter()
        .zip(&targets)
        .map(|(t, id)| {
            id.and_then(|i| results[i - start].clone())
                .unwrap_or_else(|| Tensor::constant(Matrix::zeros(t.shape().0, t.shape().1)))
        })
        .collect())
}
