//! Tape-style reverse-mode automatic differentiation.
//!
//! Nodes live in an arena and are appended in evaluation order, so the arena
//! index order is already a topological order; `backward` walks it in
//! reverse. A graph is single-use: once `backward` has run, a second call is
//! rejected until [`Graph::reset_grads`] clears the accumulated gradients.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Scale(Var, T),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// A gradient-inert leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.consumed = false;
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(name, sa, sb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shapes already checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x C` row vector to every row of an `N x C` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape("add_row", ta.shape(), tr.shape()));
        }
        let c = ta.cols();
        let mut v = ta.clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x += tr.data()[i % c];
        }
        self.push("add_row", v, Op::AddRow(a, row), &[a, row])
    }

    /// Scales row `i` of an `N x C` matrix by entry `i` of an `N x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(Error::shape("mul_col", ta.shape(), tc.shape()));
        }
        let c = ta.cols();
        let mut v = ta.clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x *= tc.data()[i / c];
        }
        self.push("mul_col", v, Op::MulCol(a, col), &[a, col])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape("concat_cols", &[rows], t.shape()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::matrix(rows, cols, data)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a).slice_rows(start, end)?;
        self.push("slice_rows", v, Op::SliceRows(a, start), &[a])
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start > end || end > ta.cols() {
            return Err(Error::shape("slice_cols", ta.shape(), &[start, end]));
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let v = Tensor::matrix(ta.rows(), end - start, data)?;
        self.push("slice_cols", v, Op::SliceCols(a, start), &[a])
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / T::count(t.numel()));
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Per-row sums: `N x C -> N x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().copied().sum()).collect();
        let v = Tensor::matrix(t.rows(), 1, data)?;
        self.push("sum_cols", v, Op::SumCols(a), &[a])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * k);
        self.push("scale", v, Op::Scale(a, k), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::exp);
        self.push("exp", v, Op::Exp(a), &[a])
    }

    /// `ln(max(x, 1e-12))`; the gradient is zero where the clamp is active.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::clamped_ln);
        self.push("log", v, Op::Log(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::tanh);
        self.push("tanh", v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_finite() {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let v = ta.softmax_rows();
        self.push("softmax_rows", v, Op::SoftmaxRows(a), &[a])
    }

    /// Back-propagates from a one-element root into every node that needs a
    /// gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape().to_vec();
        if self.value(root).numel() != 1 {
            return Err(Error::NonScalarRoot(shape));
        }
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        self.consumed = true;
        self.nodes[root.0].grad = Some(Tensor::filled(&shape, T::one()));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &op, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    /// Adds `delta` into the gradient of `target` (if it needs one).
    fn accumulate(&mut self, target: Var, delta: impl FnOnce(&[T], &mut [T])) {
        let node = &mut self.nodes[target.0];
        if !node.needs_grad {
            return;
        }
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        delta(node.value.data(), grad.data_mut());
    }

    fn propagate(&mut self, idx: usize, op: &Op<T>, g: &Tensor<T>) {
        let gd = g.data();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, |_, ga| add_into(ga, gd));
                self.accumulate(b, |_, gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(a, |_, ga| add_into(ga, gd));
                self.accumulate(b, |_, gb| {
                    for (o, &x) in gb.iter_mut().zip(gd) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let vb = self.value(b).clone();
                let va = self.value(a).clone();
                self.accumulate(a, |_, ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(gd).zip(vb.data()) {
                        *o += x * y;
                    }
                });
                self.accumulate(b, |_, gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(gd).zip(va.data()) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let c = g.cols();
                self.accumulate(a, |_, ga| add_into(ga, gd));
                self.accumulate(row, |_, gr| {
                    for (i, &x) in gd.iter().enumerate() {
                        gr[i % c] += x;
                    }
                });
            }
            Op::MulCol(a, col) => {
                let c = g.cols();
                let vc = self.value(col).clone();
                let va = self.value(a).clone();
                self.accumulate(a, |_, ga| {
                    for (i, (o, &x)) in ga.iter_mut().zip(gd).enumerate() {
                        *o += x * vc.data()[i / c];
                    }
                });
                self.accumulate(col, |_, gc| {
                    for (i, (&x, &y)) in gd.iter().zip(va.data()).enumerate() {
                        gc[i / c] += x * y;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = (self.value(a).rows(), self.value(a).cols());
                let m = self.value(b).cols();
                if self.nodes[a.0].needs_grad {
                    let vb = self.value(b).clone();
                    self.accumulate(a, |_, ga| kernels::matmul_nt_acc(gd, vb.data(), ga, n, m, k));
                }
                if self.nodes[b.0].needs_grad {
                    let va = self.value(a).clone();
                    self.accumulate(b, |_, gb| kernels::matmul_tn_acc(va.data(), gd, gb, n, k, m));
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.accumulate(a, |_, ga| add_into(ga, gt.data()));
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let slice = &gd[offset..offset + len];
                    self.accumulate(p, |_, gp| add_into(gp, slice));
                    offset += len;
                }
            }
            Op::ConcatCols(ref parts) => {
                let total = g.cols();
                let mut col0 = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.accumulate(p, |_, gp| {
                        for (r, chunk) in gp.chunks_mut(pc.max(1)).enumerate() {
                            add_into(chunk, &gd[r * total + col0..r * total + col0 + pc]);
                        }
                    });
                    col0 += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                self.accumulate(a, |_, ga| add_into(&mut ga[start * c..start * c + gd.len()], gd));
            }
            Op::SliceCols(a, start) => {
                let width = g.cols();
                let total = self.value(a).cols();
                self.accumulate(a, |_, ga| {
                    for (r, src) in gd.chunks(width.max(1)).enumerate() {
                        add_into(&mut ga[r * total + start..r * total + start + width], src);
                    }
                });
            }
            Op::Sum(a) => {
                let s = gd[0];
                self.accumulate(a, |_, ga| ga.iter_mut().for_each(|o| *o += s));
            }
            Op::Mean(a) => {
                let s = gd[0] / T::count(self.value(a).numel());
                self.accumulate(a, |_, ga| ga.iter_mut().for_each(|o| *o += s));
            }
            Op::SumCols(a) => {
                let c = self.value(a).cols();
                self.accumulate(a, |_, ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        *o += gd[i / c];
                    }
                });
            }
            Op::Scale(a, k) => {
                self.accumulate(a, |_, ga| {
                    for (o, &x) in ga.iter_mut().zip(gd) {
                        *o += x * k;
                    }
                });
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |_, ga| {
                    for ((o, &x), &yv) in ga.iter_mut().zip(gd).zip(y.data()) {
                        *o += x * yv;
                    }
                });
            }
            Op::Log(a) => {
                let floor = T::log_floor();
                self.accumulate(a, |xa, ga| {
                    for ((o, &x), &xv) in ga.iter_mut().zip(gd).zip(xa) {
                        if xv > floor {
                            *o += x / xv;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |_, ga| {
                    for ((o, &x), &yv) in ga.iter_mut().zip(gd).zip(y.data()) {
                        *o += x * (T::one() - yv * yv);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.clone();
                self.accumulate(a, |_, ga| {
                    for ((o, &x), &yv) in ga.iter_mut().zip(gd).zip(y.data()) {
                        *o += x * yv * (T::one() - yv);
                    }
                });
            }
            Op::Relu(a) => {
                self.accumulate(a, |xa, ga| {
                    for ((o, &x), &xv) in ga.iter_mut().zip(gd).zip(xa) {
                        if xv > T::zero() {
                            *o += x;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = self.nodes[idx].value.clone();
                let c = y.cols();
                self.accumulate(a, |_, ga| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gd[r * c..(r + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            ga[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}
