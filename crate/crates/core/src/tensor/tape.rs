//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value; `backward`
//! walks the nodes in exact reverse order of recording and accumulates
//! vector-Jacobian products into per-node gradient slots.

use std::borrow::Cow;

use super::kernels::{self, check_matmul};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation families, used to address a vjp for fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale,
    Softmax,
    Relu,
    Gelu,
    LayerNorm,
    SliceCols,
    ConcatCols,
    ColMax,
    GroupMax,
    Sum,
    CrossEntropy,
    L2Norm,
}

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, b_trans: bool },
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, row: usize },
    MulRow { a: usize, row: usize },
    Scale(usize, T),
    Softmax(usize),
    Relu(usize),
    Gelu(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, inv_std: Vec<T> },
    SliceCols { a: usize, start: usize },
    ConcatCols(Vec<usize>),
    ColMax { a: usize, argmax: Vec<usize> },
    GroupMax { a: usize, argmax: Vec<usize> },
    Sum(usize),
    CrossEntropy { a: usize, labels: Vec<usize>, probs: Vec<T> },
    L2Norm(usize),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow { .. } => OpKind::AddRow,
            Op::MulRow { .. } => OpKind::MulRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Relu(_) => OpKind::Relu,
            Op::Gelu(_) => OpKind::Gelu,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ColMax { .. } => OpKind::ColMax,
            Op::GroupMax { .. } => OpKind::GroupMax,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::L2Norm(_) => OpKind::L2Norm,
        }
    }
}

struct Node<'a, T: Clone> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    fault: Option<(OpKind, T)>,
}

/// Gradients produced by [`Tape::backward`], addressed by the leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visit_order: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Node indices in the order their vjps ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: scale every vjp of the given operation family by `factor`.
    #[doc(hidden)]
    pub fn inject_vjp_fault(&mut self, kind: OpKind, factor: T) {
        self.fault = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Borrow a tensor as a leaf; gradients are tracked iff it `requires_grad`.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Owned constant leaf (never differentiated).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn check_finite(&self, v: Var, name: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NumericFault { name: name.to_string() })
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", x.shape(), y.shape())));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_matmul(x, y, b_trans)?;
        let (m, k) = (x.rows(), x.cols());
        let n = if b_trans { y.rows() } else { y.cols() };
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), x.data(), false, y.data(), b_trans, T::zero(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0, b_trans }, &[a.0, b.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = kernels::transpose(self.value(a));
        self.push(value, Op::Transpose(a.0), &[a.0])
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    fn row_broadcast(&self, a: Var, row: Var, what: &str) -> Result<()> {
        let (x, r) = (self.value(a), self.value(row));
        if r.numel() != x.cols() {
            return Err(Error::Shape(format!(
                "{what}: row {:?} does not broadcast over {:?}",
                r.shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// `a + row`, with `row` broadcast down every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, "add_row")?;
        let (x, r) = (self.value(a), self.value(row));
        let c = x.cols();
        let data = x.data().iter().enumerate().map(|(i, &v)| v + r.data()[i % c]).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow { a: a.0, row: row.0 }, &[a.0, row.0]))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, "mul_row")?;
        let (x, r) = (self.value(a), self.value(row));
        let c = x.cols();
        let data = x.data().iter().enumerate().map(|(i, &v)| v * r.data()[i % c]).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulRow { a: a.0, row: row.0 }, &[a.0, row.0]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * s).collect())
            .expect("same shape");
        self.push(value, Op::Scale(a.0, s), &[a.0])
    }

    /// Row-wise softmax of `a + mask`; the mask is a constant of 0 / -inf entries.
    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let value = kernels::softmax_rows(self.value(a), mask)?;
        Ok(self.push(value, Op::Softmax(a.0), &[a.0]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(T::zero())).collect())
            .expect("same shape");
        self.push(value, Op::Relu(a.0), &[a.0])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| kernels::gelu(v)).collect())
            .expect("same shape");
        self.push(value, Op::Gelu(a.0), &[a.0])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.row_broadcast(x, gamma, "layer_norm gamma")?;
        self.row_broadcast(x, beta, "layer_norm beta")?;
        let t = self.value(x);
        let (out, xhat, inv_std) =
            kernels::layer_norm(t, self.value(gamma).data(), self.value(beta).data());
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std },
            &[x.0, gamma.0, beta.0],
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        if start + len > cols {
            return Err(Error::Shape(format!("slice {start}..{} of {cols} columns", start + len)));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(value, Op::SliceCols { a: a.0, start }, &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(value, Op::ConcatCols(idx.clone()), &idx))
    }

    /// Column-wise maximum over all rows (1×C). Ties go to the smallest row.
    pub fn col_max(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        let (value, argmax) = group_max(self.value(a), rows)?;
        Ok(self.push(value, Op::ColMax { a: a.0, argmax }, &[a.0]))
    }

    /// Column-wise maximum within consecutive blocks of `group` rows.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let (value, argmax) = group_max(self.value(a), group)?;
        Ok(self.push(value, Op::GroupMax { a: a.0, argmax }, &[a.0]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    /// Mean softmax cross-entropy of each logits row against its label.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (rows, cols) = (x.rows(), x.cols());
        if labels.len() != rows {
            return Err(Error::Shape(format!("{} labels for {rows} logit rows", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Contract(format!("label {l} outside {cols} classes")));
        }
        let probs = kernels::softmax_rows(x, None)?.into_data();
        let mut loss = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - row[l];
        }
        let loss = loss / T::of(rows as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { a: logits.0, labels: labels.to_vec(), probs },
            &[logits.0],
        ))
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).data().iter().map(|&v| v * v).sum::<T>().sqrt();
        self.push(Tensor::scalar(n), Op::L2Norm(a.0), &[a.0])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        let mut visit_order = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[i].take() else { continue };
            if let Some((kind, factor)) = self.fault {
                if kind == node.op.kind() {
                    g.data_mut().iter_mut().for_each(|v| *v = *v * factor);
                }
            }
            visit_order.push(i);
            self.vjp(i, &g, &mut grads);
        }
        Ok(Gradients { grads, visit_order })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], i: usize) -> &'g mut [T] {
        let shape = self.nodes[i].value.shape();
        grads[i].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
    }

    fn vjp(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, b_trans } => {
                let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
                let (m, k) = (x.rows(), x.cols());
                let n = g.cols();
                if self.wants(a) {
                    // dA = G · op(B)ᵀ
                    let da = self.slot(grads, a);
                    T::gemm(m, n, k, T::one(), gd, false, y.data(), !b_trans, T::one(), da);
                }
                if self.wants(b) {
                    let db = self.slot(grads, b);
                    if b_trans {
                        // B is n×k: dB = Gᵀ · A
                        T::gemm(n, m, k, T::one(), gd, true, x.data(), false, T::one(), db);
                    } else {
                        // dB = Aᵀ · G
                        T::gemm(k, m, n, T::one(), x.data(), true, gd, false, T::one(), db);
                    }
                }
            }
            &Op::Transpose(a) => {
                if self.wants(a) {
                    let gt = kernels::transpose(g);
                    add_into(self.slot(grads, a), gt.data());
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    add_into(self.slot(grads, a), gd);
                }
                if self.wants(b) {
                    add_into(self.slot(grads, b), gd);
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    add_into(self.slot(grads, a), gd);
                }
                if self.wants(b) {
                    for (d, &v) in self.slot(grads, b).iter_mut().zip(gd) {
                        *d += -v;
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (x, y) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                if self.wants(a) {
                    for ((d, &v), &yv) in self.slot(grads, a).iter_mut().zip(gd).zip(y) {
                        *d += v * yv;
                    }
                }
                if self.wants(b) {
                    for ((d, &v), &xv) in self.slot(grads, b).iter_mut().zip(gd).zip(x) {
                        *d += v * xv;
                    }
                }
            }
            &Op::AddRow { a, row } => {
                let c = g.cols();
                if self.wants(a) {
                    add_into(self.slot(grads, a), gd);
                }
                if self.wants(row) {
                    let dr = self.slot(grads, row);
                    for (idx, &v) in gd.iter().enumerate() {
                        dr[idx % c] += v;
                    }
                }
            }
            &Op::MulRow { a, row } => {
                let c = g.cols();
                let x = self.nodes[a].value.data();
                let r = self.nodes[row].value.data();
                if self.wants(a) {
                    for (idx, (d, &v)) in self.slot(grads, a).iter_mut().zip(gd).enumerate() {
                        *d += v * r[idx % c];
                    }
                }
                if self.wants(row) {
                    let dr = self.slot(grads, row);
                    for (idx, (&v, &xv)) in gd.iter().zip(x).enumerate() {
                        dr[idx % c] += v * xv;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if self.wants(a) {
                    for (d, &v) in self.slot(grads, a).iter_mut().zip(gd) {
                        *d += v * s;
                    }
                }
            }
            &Op::Softmax(a) => {
                if self.wants(a) {
                    let p = node.value.data();
                    let c = g.cols();
                    let da = self.slot(grads, a);
                    for r in 0..g.rows() {
                        let span = r * c..(r + 1) * c;
                        let dot: T = p[span.clone()].iter().zip(&gd[span.clone()]).map(|(&pp, &gg)| pp * gg).sum();
                        for j in span {
                            da[j] += p[j] * (gd[j] - dot);
                        }
                    }
                }
            }
            &Op::Relu(a) => {
                if self.wants(a) {
                    let x = self.nodes[a].value.data();
                    for ((d, &v), &xv) in self.slot(grads, a).iter_mut().zip(gd).zip(x) {
                        if xv > T::zero() {
                            *d += v;
                        }
                    }
                }
            }
            &Op::Gelu(a) => {
                if self.wants(a) {
                    let x = self.nodes[a].value.data();
                    for ((d, &v), &xv) in self.slot(grads, a).iter_mut().zip(gd).zip(x) {
                        *d += v * kernels::gelu_grad(xv);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let c = g.cols();
                let rows = g.rows();
                let gam = self.nodes[gamma].value.data();
                if self.wants(gamma) {
                    let dg = self.slot(grads, gamma);
                    for (idx, (&v, &h)) in gd.iter().zip(xhat).enumerate() {
                        dg[idx % c] += v * h;
                    }
                }
                if self.wants(beta) {
                    let db = self.slot(grads, beta);
                    for (idx, &v) in gd.iter().enumerate() {
                        db[idx % c] += v;
                    }
                }
                if self.wants(x) {
                    let n = T::of(c as f64);
                    let dx = self.slot(grads, x);
                    let mut dh = vec![T::zero(); c];
                    for (r, &is) in inv_std.iter().enumerate().take(rows) {
                        let base = r * c;
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..c {
                            dh[j] = gd[base + j] * gam[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * xhat[base + j];
                        }
                        mean_dh = mean_dh / n;
                        mean_dh_h = mean_dh_h / n;
                        for j in 0..c {
                            dx[base + j] += is * (dh[j] - mean_dh - xhat[base + j] * mean_dh_h);
                        }
                    }
                }
            }
            &Op::SliceCols { a, start } => {
                if self.wants(a) {
                    let src_cols = self.nodes[a].value.cols();
                    let len = g.cols();
                    let da = self.slot(grads, a);
                    for r in 0..g.rows() {
                        add_into(&mut da[r * src_cols + start..r * src_cols + start + len], g.row(r));
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    if self.wants(p) {
                        let dp = self.slot(grads, p);
                        for r in 0..g.rows() {
                            add_into(&mut dp[r * w..(r + 1) * w], &gd[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ColMax { a, argmax } | Op::GroupMax { a, argmax } => {
                let a = *a;
                if self.wants(a) {
                    let c = g.cols();
                    let da = self.slot(grads, a);
                    for (idx, &src_row) in argmax.iter().enumerate() {
                        da[src_row * c + idx % c] += gd[idx];
                    }
                }
            }
            &Op::Sum(a) => {
                if self.wants(a) {
                    let s = gd[0];
                    self.slot(grads, a).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::CrossEntropy { a, labels, probs } => {
                let a = *a;
                if self.wants(a) {
                    let c = self.nodes[a].value.cols();
                    let s = gd[0] / T::of(labels.len() as f64);
                    let da = self.slot(grads, a);
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == l { T::one() } else { T::zero() };
                            da[r * c + j] += s * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            &Op::L2Norm(a) => {
                if self.wants(a) {
                    let norm = node.value.item();
                    if norm > T::zero() {
                        let s = gd[0] / norm;
                        let x = self.nodes[a].value.data();
                        for (d, &xv) in self.slot(grads, a).iter_mut().zip(x) {
                            *d += s * xv;
                        }
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn group_max<T: Scalar>(x: &Tensor<T>, group: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (rows, cols) = (x.rows(), x.cols());
    if group == 0 || rows % group != 0 {
        return Err(Error::Shape(format!("{rows} rows do not split into groups of {group}")));
    }
    let groups = rows / group;
    let mut out = vec![T::zero(); groups * cols];
    let mut argmax = vec![0usize; groups * cols];
    for gi in 0..groups {
        for c in 0..cols {
            let mut best = gi * group;
            let mut best_v = x.at(best, c);
            for r in gi * group + 1..(gi + 1) * group {
                let v = x.at(r, c);
                if v > best_v {
                    best = r;
                    best_v = v;
                }
            }
            out[gi * cols + c] = best_v;
            argmax[gi * cols + c] = best;
        }
    }
    Ok((Tensor::new(vec![groups, cols], out)?, argmax))
}
