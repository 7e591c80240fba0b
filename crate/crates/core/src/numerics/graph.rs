//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] owns every intermediate value produced while evaluating a
//! model. Nodes are appended in evaluation order, so walking the list
//! backwards is a valid topological order for the chain rule.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{self, Tensor};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Softmax(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        smoothing: T,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation recorder and evaluator.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients<T> {
    per_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.per_node.get(v.0).and_then(Option::as_ref)
    }

    /// Dense per-parameter gradients aligned with `store`; parameters that
    /// were never bound, or that do not reach the loss, get zeros.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape()))
            .collect();
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                out[id.0] = g.clone();
            }
        }
        out
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free input that receives a gradient (used by gradient checks).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.shared(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.expect_id(name)?;
        Ok(self.param(store, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.require_matrix("matmul")?;
        let (k2, n) = bv.require_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let out = tensor::matmul(av.data(), bv.data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.require_matrix("matmul_nt")?;
        let (n, k2) = bv.require_matrix("matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", av.shape(), bv.shape()));
        }
        let out = tensor::matmul_nt(av.data(), bv.data(), m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Adds a rank-1 `bias` to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = av.require_matrix("add_row")?;
        if bv.shape() != [n] {
            return Err(shape_err("add_row", av.shape(), bv.shape()));
        }
        let mut data = av.data().to_vec();
        for i in 0..m {
            for (x, &b) in data[i * n..(i + 1) * n].iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(t, Op::AddRow(a, bias), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    /// Adds a constant tensor (e.g. an additive attention mask).
    pub fn add_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != c.shape() {
            return Err(shape_err("add_const", av.shape(), c.shape()));
        }
        let data = av.data().iter().zip(c.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::AddConst(a), ng))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = xv.require_matrix("layer_norm")?;
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(shape_err("layer_norm", xv.shape(), gv.shape()));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let nf = T::lit(n as f64);
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(tensor::gelu);
        let ng = self.ng(x);
        self.push(t, Op::Gelu(x), ng)
    }

    /// Row-wise softmax. Every row must keep at least one finite logit.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.require_matrix("softmax")?;
        let mut data = xv.data().to_vec();
        for i in 0..m {
            tensor::softmax_row(&mut data[i * n..(i + 1) * n]);
        }
        let t = Tensor::matrix(m, n, data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax(x), ng))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, n) = tv.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= rows {
                return Err(shape_err("gather_rows", tv.shape(), &[id]));
            }
            data.extend_from_slice(tv.row(id));
        }
        let t = Tensor::matrix(ids.len(), n, data)?;
        let ng = self.ng(table);
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", &[], &[]))?;
        let (_, n) = self.value(*first).require_matrix("concat_rows")?;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let pv = self.value(p);
            let (pm, pn) = pv.require_matrix("concat_rows")?;
            if pn != n {
                return Err(shape_err("concat_rows", self.shape(*first), pv.shape()));
            }
            data.extend_from_slice(pv.data());
            m += pm;
        }
        let t = Tensor::matrix(m, n, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", &[], &[]))?;
        let (m, _) = self.value(*first).require_matrix("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (pm, pn) = pv.require_matrix("concat_cols")?;
            if pm != m {
                return Err(shape_err("concat_cols", self.shape(*first), pv.shape()));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.require_matrix("slice_rows")?;
        if start + len > m {
            return Err(shape_err("slice_rows", xv.shape(), &[start, len]));
        }
        let data = xv.data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::matrix(len, n, data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.require_matrix("slice_cols")?;
        if start + len > n {
            return Err(shape_err("slice_cols", xv.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let t = Tensor::matrix(m, len, data)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::SliceCols { x, start }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.require_matrix("transpose")?;
        let t = Tensor::matrix(n, m, tensor::transpose(xv.data(), m, n))?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Transpose(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Summed label-smoothed cross-entropy over the rows of `logits`.
    ///
    /// Each row's target distribution puts `1 - smoothing` on the target id
    /// and spreads `smoothing` uniformly over the vocabulary.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: T) -> Result<Var> {
        let lv = self.value(logits);
        let (m, n) = lv.require_matrix("cross_entropy")?;
        if targets.len() != m {
            return Err(shape_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(shape_err("cross_entropy", lv.shape(), &[bad]));
        }
        let uniform = smoothing / T::lit(n as f64);
        let mut logp = vec![T::zero(); n];
        let mut probs = vec![T::zero(); m * n];
        let mut total = T::zero();
        for (i, &tgt) in targets.iter().enumerate() {
            tensor::log_softmax_row(lv.row(i), &mut logp);
            let mut row_loss = T::zero();
            for j in 0..n {
                let mut q = uniform;
                if j == tgt {
                    q += T::one() - smoothing;
                }
                row_loss -= q * logp[j];
                probs[i * n + j] = logp[j].exp();
            }
            total += row_loss;
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> = self.bound.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort();
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.ng(*a) {
                    let da = tensor::matmul_nt(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.ng(*b) {
                    let db = tensor::matmul_tn(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.rows();
                if self.ng(*a) {
                    let da = tensor::matmul(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.ng(*b) {
                    let db = tensor::matmul_tn(g.data(), av.data(), m, n, k);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*bias) {
                    let n = g.cols();
                    let mut db = vec![T::zero(); n];
                    for i in 0..g.rows() {
                        for (d, &x) in db.iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(vec![n], db).unwrap());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma);
                let (m, n) = (g.rows(), g.cols());
                let nf = T::lit(n as f64);
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); m * n];
                    for i in 0..m {
                        let gr = g.row(i);
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut mean_g = T::zero();
                        let mut mean_gx = T::zero();
                        for j in 0..n {
                            let gj = gr[j] * gv.data()[j];
                            mean_g += gj;
                            mean_gx += gj * xh[j];
                        }
                        mean_g /= nf;
                        mean_gx /= nf;
                        for j in 0..n {
                            let gj = gr[j] * gv.data()[j];
                            dx[i * n + j] = rstd[i] * (gj - mean_g - xh[j] * mean_gx);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::matrix(m, n, dx).unwrap());
                }
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g.data()[i * n + j];
                            dg[j] += gij * xhat[i * n + j];
                            db[j] += gij;
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::new(vec![n], dg).unwrap());
                    self.accumulate(grads, *beta, Tensor::new(vec![n], db).unwrap());
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| gi * tensor::gelu_grad(xi))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(x) => {
                let (m, n) = (out.rows(), out.cols());
                let mut d = vec![T::zero(); m * n];
                for i in 0..m {
                    let y = out.row(i);
                    let gr = g.row(i);
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        d[i * n + j] = y[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(m, n, d).unwrap());
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let n = tv.cols();
                let mut d = Tensor::zeros(tv.shape());
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id * n..(id + 1) * n];
                    for (a, &b) in dst.iter_mut().zip(g.row(i)) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pm = self.value(p).rows();
                    if self.ng(p) {
                        let d = g.data()[offset * n..(offset + pm) * n].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(pm, n, d).unwrap());
                    }
                    offset += pm;
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pn = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(m * pn);
                        for i in 0..m {
                            d.extend_from_slice(&g.row(i)[offset..offset + pn]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(m, pn, d).unwrap());
                    }
                    offset += pn;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let n = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                d.data_mut()[start * n..(start + g.rows()) * n].copy_from_slice(g.data());
                self.accumulate(grads, *x, d);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let n = xv.cols();
                let len = g.cols();
                let mut d = Tensor::zeros(xv.shape());
                for i in 0..g.rows() {
                    d.data_mut()[i * n + start..i * n + start + len].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Transpose(x) => {
                let (m, n) = (g.rows(), g.cols());
                let d = tensor::transpose(g.data(), m, n);
                self.accumulate(grads, *x, Tensor::matrix(n, m, d).unwrap());
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.item()));
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                let lv = self.value(*logits);
                let (m, n) = (lv.rows(), lv.cols());
                let scale = g.item();
                let uniform = *smoothing / T::lit(n as f64);
                let mut d = vec![T::zero(); m * n];
                for (i, &tgt) in targets.iter().enumerate() {
                    for j in 0..n {
                        let mut q = uniform;
                        if j == tgt {
                            q += T::one() - *smoothing;
                        }
                        d[i * n + j] = scale * (probs[i * n + j] - q);
                    }
                }
                self.accumulate(grads, *logits, Tensor::matrix(m, n, d).unwrap());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let p = g.input(mat(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(p).unwrap().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let p = g.input(Tensor::<f64>::scalar(3.0));
        let sq = g.mul(p, p).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.wrt(p).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let p = g.input(mat(1, 2, &[1.0, 2.0]));
        assert!(matches!(g.backward(p), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn matmul_shape_error_reports_both() {
        let mut g = Graph::new();
        let a = g.constant(mat(2, 3, &[0.0; 6]));
        let b = g.constant(mat(2, 3, &[0.0; 6]));
        match g.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(mat(1, 4, &[2.5; 4]));
        let gamma = g.constant(Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        let beta = g.constant(Tensor::new(vec![4], vec![0.0; 4]).unwrap());
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(mat(2, 3, &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]));
        let y = g.softmax(x).unwrap();
        for i in 0..2 {
            let s: f64 = g.value(y).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_params_get_zero() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", mat(1, 2, &[1.0, 2.0])).unwrap();
        let b = store.insert("b", mat(1, 2, &[3.0, 4.0])).unwrap();
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let _bv = g.param(&store, b);
        let s = g.sum(av);
        let grads = g.backward(s).unwrap().param_grads(&store);
        assert_eq!(grads[0].data(), &[1.0, 1.0]);
        assert_eq!(grads[1].data(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_vocab() {
        for smoothing in [0.0, 0.1, 0.5] {
            let mut g = Graph::new();
            let x = g.constant(mat(1, 7, &[0.3; 7]));
            let l = g.cross_entropy(x, &[2], smoothing).unwrap();
            assert!((g.value(l).item() - 7f64.ln()).abs() < 1e-12);
        }
    }
}
