//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] owns an immutable row-major value buffer. Tensors created
//! with [`Tensor::param`] are trainable leaves; every operation whose inputs
//! include a trainable tensor records a graph node so that
//! [`Tensor::backward`] can propagate gradients to those leaves. Operations
//! on constants (including teacher parameters, which are never trainable)
//! produce constants with no graph linkage.
//!
//! Only the operations needed by MLP encoders and the self-supervised losses
//! are provided: matrix products, row-wise bias, ReLU, row-wise L2
//! normalization, softmax and log-softmax, elementwise arithmetic and
//! reductions.

mod grad_check;

pub use grad_check::{grad_check, relative_error};

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    // Monotonic creation id; inputs always have smaller ids than outputs,
    // so sorting by id gives a topological order of the graph.
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

struct Node {
    op: Op,
    inputs: Vec<Tensor>,
}

enum Op {
    MatMul,
    AddRowBias,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    Relu,
    L2NormalizeRows { norms: Vec<f64>, eps: f64 },
    SoftmaxRows,
    LogSoftmaxRows,
    SumRows,
    Column(usize),
    ConcatCols,
    Sum,
    Mean,
    Transpose,
    Reshape,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &self.inner.values)
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                values,
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    fn checked(shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim("tensor", shape, &[values.len()]));
        }
        Ok(Self::build(shape.to_vec(), values, requires_grad, None))
    }

    /// A constant tensor: never receives gradient.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::checked(shape, values, false)
    }

    /// A trainable leaf.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::checked(shape, values, true)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(&[n], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], values)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    /// Output of an operation: linked into the graph only when some input
    /// is trainable.
    fn from_op(shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: Vec<Tensor>) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node { op, inputs });
        Self::build(shape, values, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn len(&self) -> usize {
        self.inner.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True for tensors not produced by a recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.values[0])
    }

    /// Accumulated gradient, all zeros when nothing reached this tensor.
    pub fn grad(&self) -> Vec<f64> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.len()])
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// A constant copy with no graph linkage.
    pub fn detach(&self) -> Tensor {
        Self::build(self.inner.shape.clone(), self.inner.values.clone(), false, None)
    }

    /// (rows, cols) view: vectors are a single row.
    fn as_rows(&self) -> Result<(usize, usize)> {
        match self.shape() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Contract(format!(
                "expected a vector or matrix, got shape {other:?}"
            ))),
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    // ----- operations -------------------------------------------------

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (r, k) = match self.shape() {
            [r, k] => (*r, *k),
            _ => return Err(Error::dim("matmul", self.shape(), rhs.shape())),
        };
        let (k2, c) = match rhs.shape() {
            [k2, c] => (*k2, *c),
            _ => return Err(Error::dim("matmul", self.shape(), rhs.shape())),
        };
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(), rhs.shape()));
        }
        let out = matmul_raw(self.values(), rhs.values(), r, k, c);
        Ok(Self::from_op(
            vec![r, c],
            out,
            Op::MatMul,
            vec![self.clone(), rhs.clone()],
        ))
    }

    /// Adds `bias` (shape `[c]`) to every row of a `[r × c]` matrix.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.as_rows()?;
        if bias.shape() != [c] {
            return Err(Error::dim("add_row_bias", self.shape(), bias.shape()));
        }
        let b = bias.values();
        let mut out = self.values().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        debug_assert_eq!(out.len(), r * c);
        Ok(Self::from_op(
            self.shape().to_vec(),
            out,
            Op::AddRowBias,
            vec![self.clone(), bias.clone()],
        ))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "add")?;
        let out = zip_map(self.values(), rhs.values(), |a, b| a + b);
        Ok(Self::from_op(self.shape().to_vec(), out, Op::Add, vec![self.clone(), rhs.clone()]))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "sub")?;
        let out = zip_map(self.values(), rhs.values(), |a, b| a - b);
        Ok(Self::from_op(self.shape().to_vec(), out, Op::Sub, vec![self.clone(), rhs.clone()]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "mul")?;
        let out = zip_map(self.values(), rhs.values(), |a, b| a * b);
        Ok(Self::from_op(self.shape().to_vec(), out, Op::Mul, vec![self.clone(), rhs.clone()]))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.values().iter().map(|v| v * factor).collect();
        Self::from_op(self.shape().to_vec(), out, Op::Scale(factor), vec![self.clone()])
    }

    pub fn add_scalar(&self, offset: f64) -> Tensor {
        let out = self.values().iter().map(|v| v + offset).collect();
        Self::from_op(self.shape().to_vec(), out, Op::AddScalar, vec![self.clone()])
    }

    pub fn relu(&self) -> Tensor {
        let out = self.values().iter().map(|&v| v.max(0.0)).collect();
        Self::from_op(self.shape().to_vec(), out, Op::Relu, vec![self.clone()])
    }

    /// Divides every row by `max(‖row‖₂, eps)`. A vector is one row.
    pub fn l2_normalize_rows(&self, eps: f64) -> Result<Tensor> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        let (_, c) = self.as_rows()?;
        let mut out = self.values().to_vec();
        let mut norms = Vec::with_capacity(out.len() / c);
        for row in out.chunks_exact_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        Ok(Self::from_op(
            self.shape().to_vec(),
            out,
            Op::L2NormalizeRows { norms, eps },
            vec![self.clone()],
        ))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (_, c) = self.as_rows()?;
        self.check_finite("softmax")?;
        let mut out = self.values().to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(Self::from_op(self.shape().to_vec(), out, Op::SoftmaxRows, vec![self.clone()]))
    }

    /// Log-softmax over the last axis (log-sum-exp with max subtraction).
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (_, c) = self.as_rows()?;
        self.check_finite("log_softmax")?;
        let mut out = self.values().to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(Self::from_op(self.shape().to_vec(), out, Op::LogSoftmaxRows, vec![self.clone()]))
    }

    /// Sums each row: `[r × c] → [r]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, c) = self.as_rows()?;
        let out = self.values().chunks_exact(c).map(|row| row.iter().sum()).collect();
        Ok(Self::from_op(vec![r], out, Op::SumRows, vec![self.clone()]))
    }

    /// Extracts column `j`: `[r × c] → [r]`.
    pub fn column(&self, j: usize) -> Result<Tensor> {
        let (r, c) = self.as_rows()?;
        if j >= c {
            return Err(Error::InvalidArgument(format!("column {j} out of range for {c} columns")));
        }
        let out = self.values().chunks_exact(c).map(|row| row[j]).collect();
        Ok(Self::from_op(vec![r], out, Op::Column(j), vec![self.clone()]))
    }

    /// Side-by-side concatenation: `[r × c1] ++ [r × c2] → [r × (c1 + c2)]`.
    /// Vectors count as `[r × 1]` columns.
    pub fn concat_cols(&self, rhs: &Tensor) -> Result<Tensor> {
        let cols = |t: &Tensor| match t.shape() {
            [r] => Ok((*r, 1)),
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Contract(format!("concat_cols needs vectors or matrices, got {other:?}"))),
        };
        let (r1, c1) = cols(self)?;
        let (r2, c2) = cols(rhs)?;
        if r1 != r2 {
            return Err(Error::dim("concat_cols", self.shape(), rhs.shape()));
        }
        let mut out = Vec::with_capacity(r1 * (c1 + c2));
        for (a, b) in self.values().chunks_exact(c1).zip(rhs.values().chunks_exact(c2)) {
            out.extend_from_slice(a);
            out.extend_from_slice(b);
        }
        Ok(Self::from_op(
            vec![r1, c1 + c2],
            out,
            Op::ConcatCols,
            vec![self.clone(), rhs.clone()],
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.values().iter().sum();
        Self::from_op(vec![1], vec![s], Op::Sum, vec![self.clone()])
    }

    pub fn mean(&self) -> Tensor {
        let s = self.values().iter().sum::<f64>() / self.len() as f64;
        Self::from_op(vec![1], vec![s], Op::Mean, vec![self.clone()])
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = match self.shape() {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::Contract(format!("transpose needs a matrix, got {other:?}")))
            }
        };
        let out = transpose_raw(self.values(), r, c);
        Ok(Self::from_op(vec![c, r], out, Op::Transpose, vec![self.clone()]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.len() || shape.iter().any(|&s| s == 0) {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Ok(Self::from_op(
            shape.to_vec(),
            self.values().to_vec(),
            Op::Reshape,
            vec![self.clone()],
        ))
    }

    fn check_finite(&self, op: &'static str) -> Result<()> {
        if let Some(bad) = self.values().iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericDomain {
                op,
                detail: format!("non-finite input {bad}"),
            });
        }
        Ok(())
    }

    // ----- reverse pass -----------------------------------------------

    /// Propagates `∂self/∂leaf` into every trainable tensor reachable from
    /// this scalar. Constants, including teacher parameters, are never
    /// visited and keep a zero gradient.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order: HashMap<u64, Tensor> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if order.contains_key(&t.inner.id) {
                continue;
            }
            if let Some(node) = &t.inner.node {
                stack.extend(node.inputs.iter().filter(|i| i.requires_grad()).cloned());
            }
            order.insert(t.inner.id, t);
        }
        let mut order: Vec<Tensor> = order.into_values().collect();
        order.sort_unstable_by(|a, b| b.inner.id.cmp(&a.inner.id));

        accumulate(self, &[1.0]);
        for t in &order {
            let Some(node) = &t.inner.node else { continue };
            let Some(g) = t.inner.grad.borrow().clone() else { continue };
            backprop_node(t, node, &g);
        }
        Ok(())
    }
}

fn accumulate(t: &Tensor, g: &[f64]) {
    if !t.requires_grad() {
        return;
    }
    let mut slot = t.inner.grad.borrow_mut();
    match slot.as_mut() {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn backprop_node(out: &Tensor, node: &Node, g: &[f64]) {
    let x = &node.inputs;
    match &node.op {
        Op::MatMul => {
            let (a, b) = (&x[0], &x[1]);
            let (r, k) = (a.shape()[0], a.shape()[1]);
            let c = b.shape()[1];
            if a.requires_grad() {
                // dA = G · Bᵀ
                let bt = transpose_raw(b.values(), k, c);
                accumulate(a, &matmul_raw(g, &bt, r, c, k));
            }
            if b.requires_grad() {
                // dB = Aᵀ · G
                let at = transpose_raw(a.values(), r, k);
                accumulate(b, &matmul_raw(&at, g, k, r, c));
            }
        }
        Op::AddRowBias => {
            accumulate(&x[0], g);
            if x[1].requires_grad() {
                let c = x[1].len();
                let mut db = vec![0.0; c];
                for row in g.chunks_exact(c) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(&x[1], &db);
            }
        }
        Op::Add => {
            accumulate(&x[0], g);
            accumulate(&x[1], g);
        }
        Op::Sub => {
            accumulate(&x[0], g);
            if x[1].requires_grad() {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(&x[1], &neg);
            }
        }
        Op::Mul => {
            if x[0].requires_grad() {
                accumulate(&x[0], &zip_map(g, x[1].values(), |a, b| a * b));
            }
            if x[1].requires_grad() {
                accumulate(&x[1], &zip_map(g, x[0].values(), |a, b| a * b));
            }
        }
        Op::Scale(f) => {
            let d: Vec<f64> = g.iter().map(|v| v * f).collect();
            accumulate(&x[0], &d);
        }
        Op::AddScalar | Op::Reshape => accumulate(&x[0], g),
        Op::Relu => {
            let d = zip_map(g, x[0].values(), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
            accumulate(&x[0], &d);
        }
        Op::L2NormalizeRows { norms, eps } => {
            let y = out.values();
            let c = y.len() / norms.len();
            let mut d = vec![0.0; y.len()];
            for (i, &n) in norms.iter().enumerate() {
                let span = i * c..(i + 1) * c;
                let (yr, gr, dr) = (&y[span.clone()], &g[span.clone()], &mut d[span]);
                if n > *eps {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = (gv - yv * dot) / n;
                    }
                } else {
                    // Clamped branch: y = x / eps is linear in x.
                    for (dv, &gv) in dr.iter_mut().zip(gr) {
                        *dv = gv / n;
                    }
                }
            }
            accumulate(&x[0], &d);
        }
        Op::SoftmaxRows => {
            let y = out.values();
            let c = *out.shape().last().unwrap_or(&1);
            let mut d = vec![0.0; y.len()];
            for ((yr, gr), dr) in y.chunks_exact(c).zip(g.chunks_exact(c)).zip(d.chunks_exact_mut(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                    *dv = yv * (gv - dot);
                }
            }
            accumulate(&x[0], &d);
        }
        Op::LogSoftmaxRows => {
            let y = out.values();
            let c = *out.shape().last().unwrap_or(&1);
            let mut d = vec![0.0; y.len()];
            for ((yr, gr), dr) in y.chunks_exact(c).zip(g.chunks_exact(c)).zip(d.chunks_exact_mut(c)) {
                let total: f64 = gr.iter().sum();
                for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                    *dv = gv - yv.exp() * total;
                }
            }
            accumulate(&x[0], &d);
        }
        Op::SumRows => {
            let c = x[0].len() / g.len();
            let d: Vec<f64> = g.iter().flat_map(|&gv| std::iter::repeat_n(gv, c)).collect();
            accumulate(&x[0], &d);
        }
        Op::Column(j) => {
            let c = x[0].len() / g.len();
            let mut d = vec![0.0; x[0].len()];
            for (i, &gv) in g.iter().enumerate() {
                d[i * c + j] = gv;
            }
            accumulate(&x[0], &d);
        }
        Op::ConcatCols => {
            let rows = out.shape()[0];
            let c1 = x[0].len() / rows;
            let c2 = x[1].len() / rows;
            let mut d1 = Vec::with_capacity(x[0].len());
            let mut d2 = Vec::with_capacity(x[1].len());
            for row in g.chunks_exact(c1 + c2) {
                d1.extend_from_slice(&row[..c1]);
                d2.extend_from_slice(&row[c1..]);
            }
            accumulate(&x[0], &d1);
            accumulate(&x[1], &d2);
        }
        Op::Sum => accumulate(&x[0], &vec![g[0]; x[0].len()]),
        Op::Mean => {
            let n = x[0].len() as f64;
            accumulate(&x[0], &vec![g[0] / n; x[0].len()]);
        }
        Op::Transpose => {
            let (r, c) = (x[0].shape()[0], x[0].shape()[1]);
            accumulate(&x[0], &transpose_raw(g, c, r));
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Row-major `[r × k] · [k × c]`, i-k-j loop order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(c)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(c)) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Normalizes a single vector; see [`Tensor::l2_normalize_rows`].
pub fn l2_normalize(v: &Tensor, eps: f64) -> Result<Tensor> {
    match v.shape() {
        [_] => v.l2_normalize_rows(eps),
        other => Err(Error::Contract(format!("l2_normalize expects a vector, got {other:?}"))),
    }
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    match logits.shape() {
        [_] => logits.softmax_rows(),
        other => Err(Error::Contract(format!("softmax expects a vector, got {other:?}"))),
    }
}
