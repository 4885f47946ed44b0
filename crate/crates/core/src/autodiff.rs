//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one record whose inputs were recorded earlier, so
//! replaying the tape backwards visits each record once in a valid order.
//! A tape is single-use: build it, run the forward pass, call
//! [`Tape::backward`], read the gradients. Fresh forward passes get a fresh
//! tape, so gradients can never be recorded twice.

use std::sync::Arc;

use crate::error::TensorError;
use crate::tensor::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Deliberate backward-pass corruption used to prove that the gradient
/// checker notices broken derivatives.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipConvKernelGrad,
}

/// Sparse row mixing: output row `r` is `Σ weight · input[source]` over the
/// entries `offsets[r]..offsets[r + 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowMix {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    weights: Vec<f64>,
}

impl RowMix {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            sources: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Plain row selection, `input[idx, :]`.
    pub fn gather(idx: &[usize]) -> Self {
        let mut mix = Self::new();
        for &i in idx {
            mix.push_row([(i, 1.0)]);
        }
        mix
    }

    /// Appends an output row; an empty iterator yields a zero row.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (source, weight) in entries {
            self.sources.push(source);
            self.weights.push(weight);
        }
        self.offsets.push(self.sources.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.sources[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    fn max_source(&self) -> Option<usize> {
        self.sources.iter().copied().max()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    Unary(Unary, Var),
    Reduce {
        input: Var,
        op: Reduce,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAll(Var),
    RowMix(Var, Arc<RowMix>),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    MulColumn(Var, Var),
    AddRow(Var, Var),
    Unit {
        input: Var,
        norm: f64,
    },
    CrossConv {
        x: Var,
        kernels: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Binary(_, a, b) | Op::MulColumn(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Unary(_, a)
            | Op::SumAll(a)
            | Op::RowMix(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::Reduce { input, .. } | Op::Unit { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::CrossConv { x, kernels } => vec![*x, *kernels],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
    fault: Option<Fault>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a trainable input; it receives a gradient from `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.records.push(Record {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.records.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.records[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, present after `backward` for every
    /// gradient-tracking variable the loss depends on.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn check(&self, vars: &[Var]) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        match vars.iter().find(|v| v.0 >= self.records.len()) {
            Some(v) => Err(TensorError::UnknownVar(v.0)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.records[v.0].requires_grad);
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        Var(self.records.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(&[a, b])?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, n, p) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * p];
        gemm_acc(ta.data(), tb.data(), &mut out, m, n, p);
        let value = Tensor::new(vec![m, p], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Elementwise binary op on equal shapes, or with one single-element side
    /// broadcast against the other.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(&[a, b])?;
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y));
            Tensor::new(ta.shape().to_vec(), data.collect())?
        } else if tb.is_scalar() {
            let y = tb.data()[0];
            ta.map(|x| f(x, y))
        } else if ta.is_scalar() {
            let x = ta.data()[0];
            tb.map(|y| f(x, y))
        } else {
            return Err(mismatch("elementwise", ta, tb));
        };
        Ok(self.push(value, Op::Binary(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let value = self.value(a).scale(c);
        Ok(self.push(value, Op::Scale(a, c)))
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let value = self.value(a).map(|x| match op {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            // NaN propagates.
            Unary::Relu => {
                if x > 0.0 || x.is_nan() {
                    x
                } else {
                    0.0
                }
            }
        });
        Ok(self.push(value, Op::Unary(op, a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Relu, a)
    }

    /// Reduces `axis` away. Max routes its gradient to the first maximal
    /// element along the axis.
    pub fn reduce(&mut self, op: Reduce, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let t = self.value(a);
        let shape = t.shape();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: shape.len(),
            });
        }
        let extent = shape[axis];
        if extent == 0 {
            return Err(TensorError::EmptyReduction { axis });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if op == Reduce::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| data[(o * extent + j) * inner + i];
                let slot = o * inner + i;
                out[slot] = match op {
                    Reduce::Sum => (0..extent).map(at).sum(),
                    Reduce::Mean => (0..extent).map(at).sum::<f64>() / extent as f64,
                    Reduce::Max => {
                        let mut best = 0;
                        for j in 1..extent {
                            let (x, b) = (at(j), at(best));
                            if !b.is_nan() && (x > b || x.is_nan()) {
                                best = j;
                            }
                        }
                        argmax[slot] = best;
                        at(best)
                    }
                };
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                input: a,
                op,
                axis,
                argmax,
            },
        ))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let total = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::SumAll(a)))
    }

    /// Weighted row mixing of a matrix; see [`RowMix`].
    pub fn row_mix(&mut self, a: Var, mix: Arc<RowMix>) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "row_mix",
                left: t.shape().to_vec(),
                right: vec![0, 0],
            });
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        if let Some(max) = mix.max_source() {
            if max >= n {
                return Err(TensorError::IndexOutOfRange {
                    index: max,
                    extent: n,
                });
            }
        }
        let src = t.data();
        let mut out = vec![0.0; mix.rows() * d];
        for r in 0..mix.rows() {
            let dst = &mut out[r * d..(r + 1) * d];
            for (s, w) in mix.row(r) {
                for (o, &x) in dst.iter_mut().zip(&src[s * d..(s + 1) * d]) {
                    *o += w * x;
                }
            }
        }
        let value = Tensor::new(vec![mix.rows(), d], out)?;
        Ok(self.push(value, Op::RowMix(a, mix)))
    }

    /// `t[idx, :]`; duplicate indices accumulate in backward.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        self.row_mix(a, Arc::new(RowMix::gather(idx)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        self.check(inputs)?;
        let first = match inputs.first() {
            Some(&v) => self.value(v),
            None => {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: vec![],
                    right: vec![],
                })
            }
        };
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for &v in inputs {
            let t = self.value(v);
            let compatible = t.rank() == rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", first, t));
            }
            out_shape[axis] += t.shape()[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// `a ⊙ (c · 1ᵀ)`: scales row `i` of `a: n×d` by `c[i]`, `c: n×1`.
    pub fn mul_column(&mut self, a: Var, c: Var) -> Result<Var, TensorError> {
        self.check(&[a, c])?;
        let (ta, tc) = (self.value(a), self.value(c));
        if ta.rank() != 2 || tc.shape() != [ta.shape()[0], 1] {
            return Err(mismatch("mul_column", ta, tc));
        }
        let d = ta.shape()[1];
        let mut out = ta.data().to_vec();
        for (row, &s) in out.chunks_mut(d.max(1)).zip(tc.data()) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::MulColumn(a, c)))
    }

    /// Adds the vector `b: d` to every row of `a: n×d`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(&[a, b])?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.shape() != [ta.shape()[1]] {
            return Err(mismatch("add_row", ta, tb));
        }
        let d = ta.shape()[1];
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            row.iter_mut().zip(tb.data()).for_each(|(x, b)| *x += b);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddRow(a, b)))
    }

    /// `v / ‖v‖₂`.
    pub fn unit(&mut self, a: Var) -> Result<Var, TensorError> {
        self.check(&[a])?;
        let t = self.value(a);
        let norm = t.norm();
        if norm == 0.0 {
            return Err(TensorError::DegenerateProjection(norm));
        }
        let value = t.scale(1.0 / norm);
        Ok(self.push(value, Op::Unit { input: a, norm }))
    }

    /// Cross-relation convolution over a batch of pooled neighborhoods.
    ///
    /// `x: [n, T, k, D]`, `kernels: [P, T, s, D]`, output `[n, P·(k−s+1)]`
    /// in filter-major order, where
    /// `out[v, p·L + m] = Σ_t Σ_j ⟨x[v, t, m + j, :], kernels[p, t, j, :]⟩`.
    pub fn cross_conv(&mut self, x: Var, kernels: Var) -> Result<Var, TensorError> {
        self.check(&[x, kernels])?;
        let (tx, tk) = (self.value(x), self.value(kernels));
        let dims = ConvDims::of(tx, tk)?;
        let mut out = vec![0.0; dims.n * dims.p * dims.l];
        let (xs, ks) = (tx.data(), tk.data());
        for v in 0..dims.n {
            for p in 0..dims.p {
                for m in 0..dims.l {
                    let mut acc = 0.0;
                    for t in 0..dims.t {
                        acc += dot(
                            &xs[dims.x_at(v, t, m)..dims.x_at(v, t, m) + dims.s * dims.d],
                            &ks[dims.k_at(p, t)..dims.k_at(p, t) + dims.s * dims.d],
                        );
                    }
                    out[(v * dims.p + p) * dims.l + m] = acc;
                }
            }
        }
        let value = Tensor::new(vec![dims.n, dims.p * dims.l], out)?;
        Ok(self.push(value, Op::CrossConv { x, kernels }))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, TensorError> {
        self.check(&[logits])?;
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if n == 0 {
            return Err(TensorError::EmptyReduction { axis: 0 });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::LabelOutOfRange { label, classes: c });
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let log_sum = sum.ln();
            loss += log_sum - (row[label] - max);
            for (p, &z) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (z - max).exp() / sum;
            }
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Accumulates `d loss / d v` into every gradient-tracking ancestor of
    /// `loss`, then marks the tape consumed.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check(&[loss])?;
        let loss_shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.grads = vec![None; self.records.len()];
        if self.records[loss.0].requires_grad {
            self.grads[loss.0] = Some(Tensor::ones(&loss_shape));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        self.consumed = true;
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Tensor) -> Result<(), TensorError> {
        if !self.records[v.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => {
                *slot = Some(contribution);
                Ok(())
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &Tensor) -> Result<(), TensorError> {
        let op = self.records[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, n, p) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(a) {
                    let mut da = vec![0.0; m * n];
                    gemm_nt_acc(g.data(), tb.data(), &mut da, m, p, n);
                    self.accumulate(a, Tensor::new(vec![m, n], da)?)?;
                }
                if self.wants(b) {
                    let ta = self.value(a);
                    let mut db = vec![0.0; n * p];
                    gemm_tn_acc(ta.data(), g.data(), &mut db, m, n, p);
                    self.accumulate(b, Tensor::new(vec![n, p], db)?)?;
                }
            }
            Op::Binary(op, a, b) => {
                let out_shape = g.shape().to_vec();
                let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
                let expand = |t: &Tensor| -> Vec<f64> {
                    if t.shape() == out_shape.as_slice() {
                        t.data().to_vec()
                    } else {
                        vec![t.data()[0]; g.len()]
                    }
                };
                let (xa, xb) = (expand(&ta), expand(&tb));
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    Binary::Add => (g.data().to_vec(), g.data().to_vec()),
                    Binary::Sub => (g.data().to_vec(), g.data().iter().map(|x| -x).collect()),
                    Binary::Mul => (
                        g.data().iter().zip(&xb).map(|(g, y)| g * y).collect(),
                        g.data().iter().zip(&xa).map(|(g, x)| g * x).collect(),
                    ),
                };
                let fold = |t: &Tensor, full: Vec<f64>| -> Result<Tensor, TensorError> {
                    if t.shape() == out_shape.as_slice() {
                        Tensor::new(out_shape.clone(), full)
                    } else {
                        Tensor::new(t.shape().to_vec(), vec![full.iter().sum()])
                    }
                };
                if self.wants(a) {
                    self.accumulate(a, fold(&ta, ga)?)?;
                }
                if self.wants(b) {
                    self.accumulate(b, fold(&tb, gb)?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(a, g.scale(c))?,
            Op::Unary(op, a) => {
                let out = &self.records[i].value;
                let x = self.value(a);
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(x.data())
                    .map(|((&g, &y), &x)| match op {
                        Unary::Sigmoid => g * y * (1.0 - y),
                        Unary::Tanh => g * (1.0 - y * y),
                        Unary::Relu => {
                            if x > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                let grad = Tensor::new(x.shape().to_vec(), data)?;
                self.accumulate(a, grad)?;
            }
            Op::Reduce {
                input,
                op,
                axis,
                argmax,
            } => {
                let shape = self.value(input).shape().to_vec();
                let extent = shape[axis];
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut data = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    for k in 0..inner {
                        let slot = o * inner + k;
                        let gv = g.data()[slot];
                        match op {
                            Reduce::Sum | Reduce::Mean => {
                                let w = if op == Reduce::Mean {
                                    gv / extent as f64
                                } else {
                                    gv
                                };
                                for j in 0..extent {
                                    data[(o * extent + j) * inner + k] = w;
                                }
                            }
                            Reduce::Max => data[(o * extent + argmax[slot]) * inner + k] = gv,
                        }
                    }
                }
                self.accumulate(input, Tensor::new(shape, data)?)?;
            }
            Op::SumAll(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, Tensor::full(&shape, g.data()[0]))?;
            }
            Op::RowMix(a, mix) => {
                let shape = self.value(a).shape().to_vec();
                let d = shape[1];
                let mut data = vec![0.0; shape[0] * d];
                for r in 0..mix.rows() {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    for (s, w) in mix.row(r) {
                        for (o, &x) in data[s * d..(s + 1) * d].iter_mut().zip(gr) {
                            *o += w * x;
                        }
                    }
                }
                self.accumulate(a, Tensor::new(shape, data)?)?;
            }
            Op::Concat { inputs, axis } => {
                let out_shape = g.shape();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis] * inner;
                let mut start = 0;
                for v in inputs {
                    let shape = self.value(v).shape().to_vec();
                    let chunk = shape[axis] * inner;
                    if self.wants(v) {
                        let mut data = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * total + start;
                            data.extend_from_slice(&g.data()[base..base + chunk]);
                        }
                        self.accumulate(v, Tensor::new(shape, data)?)?;
                    }
                    start += chunk;
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, g.reshape(&shape)?)?;
            }
            Op::MulColumn(a, c) => {
                let (ta, tc) = (self.value(a), self.value(c));
                let d = ta.shape()[1];
                let n = ta.shape()[0];
                let mut da = g.data().to_vec();
                let mut dc = vec![0.0; n];
                for r in 0..n {
                    let span = r * d..(r + 1) * d;
                    dc[r] = dot(&g.data()[span.clone()], &ta.data()[span.clone()]);
                    let s = tc.data()[r];
                    da[span].iter_mut().for_each(|x| *x *= s);
                }
                let a_shape = ta.shape().to_vec();
                self.accumulate(a, Tensor::new(a_shape, da)?)?;
                self.accumulate(c, Tensor::new(vec![n, 1], dc)?)?;
            }
            Op::AddRow(a, b) => {
                let d = self.value(b).len();
                let mut db = vec![0.0; d];
                for row in g.data().chunks(d.max(1)) {
                    db.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                }
                self.accumulate(a, g.clone())?;
                self.accumulate(b, Tensor::vector(db))?;
            }
            Op::Unit { input, norm } => {
                let y = &self.records[i].value;
                let proj = dot(y.data(), g.data());
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &y)| (g - y * proj) / norm)
                    .collect();
                let grad = Tensor::new(y.shape().to_vec(), data)?;
                self.accumulate(input, grad)?;
            }
            Op::CrossConv { x, kernels } => {
                let (tx, tk) = (self.value(x), self.value(kernels));
                let dims = ConvDims::of(tx, tk)?;
                let (xs, ks) = (tx.data(), tk.data());
                let want_x = self.wants(x);
                let want_k = self.wants(kernels);
                let mut dx = vec![0.0; if want_x { xs.len() } else { 0 }];
                let mut dk = vec![0.0; if want_k { ks.len() } else { 0 }];
                let span = dims.s * dims.d;
                for v in 0..dims.n {
                    for p in 0..dims.p {
                        for m in 0..dims.l {
                            let gv = g.data()[(v * dims.p + p) * dims.l + m];
                            for t in 0..dims.t {
                                let (xo, ko) = (dims.x_at(v, t, m), dims.k_at(p, t));
                                if want_x {
                                    for (o, &kv) in
                                        dx[xo..xo + span].iter_mut().zip(&ks[ko..ko + span])
                                    {
                                        *o += gv * kv;
                                    }
                                }
                                if want_k {
                                    for (o, &xv) in
                                        dk[ko..ko + span].iter_mut().zip(&xs[xo..xo + span])
                                    {
                                        *o += gv * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                if self.fault == Some(Fault::FlipConvKernelGrad) {
                    dk.iter_mut().for_each(|g| *g = -*g);
                }
                let (x_shape, k_shape) = (tx.shape().to_vec(), tk.shape().to_vec());
                if want_x {
                    self.accumulate(x, Tensor::new(x_shape, dx)?)?;
                }
                if want_k {
                    self.accumulate(kernels, Tensor::new(k_shape, dk)?)?;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = g.data()[0] / n as f64;
                let mut data = probs;
                for (r, &label) in labels.iter().enumerate() {
                    data[r * c + label] -= 1.0;
                }
                data.iter_mut().for_each(|x| *x *= scale);
                self.accumulate(logits, Tensor::new(vec![n, c], data)?)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    n: usize,
    t: usize,
    k: usize,
    d: usize,
    p: usize,
    s: usize,
    l: usize,
}

impl ConvDims {
    fn of(x: &Tensor, kernels: &Tensor) -> Result<Self, TensorError> {
        let bad = || mismatch("cross_conv", x, kernels);
        let (xs, ks) = (x.shape(), kernels.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || xs[3] != ks[3] {
            return Err(bad());
        }
        let (n, t, k, d) = (xs[0], xs[1], xs[2], xs[3]);
        let (p, s) = (ks[0], ks[2]);
        if s == 0 || s > k {
            return Err(bad());
        }
        Ok(Self {
            n,
            t,
            k,
            d,
            p,
            s,
            l: k - s + 1,
        })
    }

    /// Offset of `x[v, t, m, 0]`; rows `m..m+s` are contiguous from there.
    fn x_at(&self, v: usize, t: usize, m: usize) -> usize {
        ((v * self.t + t) * self.k + m) * self.d
    }

    fn k_at(&self, p: usize, t: usize) -> usize {
        (p * self.t + t) * self.s * self.d
    }
}
