// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! A [`Tape`] records every operation in execution order. Recording order is a
//! topological order of the graph, so [`Tape::backward`] walks the nodes in
//! reverse exactly once and accumulates gradients into the leaves that were
//! created with `requires_grad`. After a backward pass the tape is cleared;
//! variables from the consumed graph become stale and are rejected.
//!
//! Broadcasting is limited to adding a row-vector bias ([`Tape::add_row`]);
//! every other binary op requires identical shapes.

mod adam;
mod kernels;
mod sparse;
mod tensor;

use std::collections::HashMap;
use std::sync::Arc;

pub use adam::{Adam, AdamConfig};
pub use kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
pub use sparse::CsrMatrix;
pub use tensor::{Tensor, TENSOR_MAGIC, TENSOR_VERSION};

use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    BatchMatMul { a: usize, b: usize, transpose_b: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { x: usize, bias: usize },
    Scale { x: usize, factor: f32 },
    Gather { table: usize, indices: Vec<usize> },
    Sigmoid(usize),
    Log(usize),
    LogSigmoid(usize),
    Relu(usize),
    Softmax { x: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, normalized: Vec<f32>, inv_std: Vec<f32> },
    Mean(usize),
    Sum(usize),
    RowSum(usize),
    TopK { x: usize, kept: Vec<bool> },
    Reshape(usize),
    SpMM { matrix: Arc<CsrMatrix>, x: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, keyed by leaf variable.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
    generation: u64,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.get(&var.id)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.generation != self.generation {
            return None;
        }
        self.grads.remove(&var.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.consumed {
            self.consumed = false;
            self.generation += 1;
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if self.consumed || v.generation != self.generation || v.id >= self.nodes.len() {
            return Err(Error::Tape("stale variable from a consumed graph".into()));
        }
        Ok(v.id)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.idx(v)?])
    }

    /// Records a leaf. It receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Records a copy of `t` as a trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone().with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.node(v)?.value.shape())
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn unary<F>(&mut self, x: Var, f: F, op: impl FnOnce(usize) -> Op) -> Result<Var>
    where
        F: Fn(f32) -> f32,
    {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        let needs = self.needs(&[xi]);
        Ok(self.push(out, op(xi), needs))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn binary<F>(&mut self, name: &'static str, a: Var, b: Var, f: F, op: fn(usize, usize) -> Op) -> Result<Var>
    where
        F: Fn(f32, f32) -> f32,
    {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(name, ai, bi)?;
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(out, op(ai, bi), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `x[.., n] + bias[n]`, broadcasting the bias over every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xi, bi) = (self.idx(x)?, self.idx(bias)?);
        let (vx, vb) = (&self.nodes[xi].value, &self.nodes[bi].value);
        if vb.len() != vx.cols() || vb.rows() != 1 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vx.clone();
        out.set_requires_grad(false);
        let c = vx.cols();
        for r in 0..vx.rows() {
            for (o, b) in out.data_mut()[r * c..(r + 1) * c].iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let needs = self.needs(&[xi, bi]);
        Ok(self.push(out, Op::AddRow { x: xi, bias: bi }, needs))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        self.unary(x, |v| v * factor, |x| Op::Scale { x, factor })
    }

    fn matrix_dims(&self, op: &'static str, i: usize) -> Result<(usize, usize)> {
        let s = self.nodes[i].value.shape();
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    /// `a[m,n] · b[n,p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (m, n) = self.matrix_dims("matmul", ai)?;
        let (n2, p) = self.matrix_dims("matmul", bi)?;
        if n != n2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, n],
                rhs: vec![n2, p],
            });
        }
        let data = gemm_nn(self.nodes[ai].value.data(), self.nodes[bi].value.data(), m, n, p);
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(Tensor::new(vec![m, p], data)?, Op::MatMul(ai, bi), needs))
    }

    /// `a[m,n] · b[p,n]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (m, n) = self.matrix_dims("matmul_nt", ai)?;
        let (p, n2) = self.matrix_dims("matmul_nt", bi)?;
        if n != n2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: vec![m, n],
                rhs: vec![p, n2],
            });
        }
        let data = gemm_nt(self.nodes[ai].value.data(), self.nodes[bi].value.data(), m, n, p);
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(Tensor::new(vec![m, p], data)?, Op::MatMulNt(ai, bi), needs))
    }

    /// Batched product of rank-3 tensors: `a[B,m,n] · b[B,n,p]`, or
    /// `a[B,m,n] · b[B,p,n]ᵀ` when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        let mismatch = || Error::Shape {
            op: "batch_matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, n) = (sa[0], sa[1], sa[2]);
        let p = if transpose_b {
            if sb[2] != n {
                return Err(mismatch());
            }
            sb[1]
        } else {
            if sb[1] != n {
                return Err(mismatch());
            }
            sb[2]
        };
        let (da, db) = (self.nodes[ai].value.data(), self.nodes[bi].value.data());
        let mut data = Vec::with_capacity(batch * m * p);
        for t in 0..batch {
            let a_t = &da[t * m * n..(t + 1) * m * n];
            let b_t = &db[t * n * p..(t + 1) * n * p];
            if transpose_b {
                data.extend(gemm_nt(a_t, b_t, m, n, p));
            } else {
                data.extend(gemm_nn(a_t, b_t, m, n, p));
            }
        }
        let needs = self.needs(&[ai, bi]);
        Ok(self.push(
            Tensor::new(vec![batch, m, p], data)?,
            Op::BatchMatMul { a: ai, b: bi, transpose_b },
            needs,
        ))
    }

    /// Row lookup: `table[N, d]` indexed by `indices` gives `[len, d]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let ti = self.idx(table)?;
        let (n, d) = self.matrix_dims("gather", ti)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("gather", format!("index {bad} out of range for {n} rows")));
        }
        let src = self.nodes[ti].value.data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let needs = self.needs(&[ti]);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], data)?,
            Op::Gather {
                table: ti,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f32::ln, Op::Log)
    }

    /// Numerically stable `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, log_sigmoid, Op::LogSigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    /// Row-wise softmax where entries with `mask[i] == false` get probability
    /// zero. Rows that are entirely masked produce zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xi = self.idx(x)?;
        let src = &self.nodes[xi].value;
        if let Some(m) = mask {
            if m.len() != src.len() {
                return Err(Error::Shape {
                    op: "masked_softmax",
                    lhs: src.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let c = src.cols();
        let mut out = vec![0.0f32; src.len()];
        for r in 0..src.rows() {
            let row = &src.data()[r * c..(r + 1) * c];
            let keep = |j: usize| mask.is_none_or(|m| m[r * c + j]);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[r * c..(r + 1) * c];
            let mut total = 0.0f32;
            for j in 0..c {
                if keep(j) {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(src.shape().to_vec(), out)?;
        let needs = self.needs(&[xi]);
        Ok(self.push(out, Op::Softmax { x: xi }, needs))
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` (both `[cols]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let src = &self.nodes[xi].value;
        let c = src.cols();
        for &p in &[gi, bi] {
            if self.nodes[p].value.len() != c {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: src.shape().to_vec(),
                    rhs: self.nodes[p].value.shape().to_vec(),
                });
            }
        }
        let (g, b) = (self.nodes[gi].value.data(), self.nodes[bi].value.data());
        let rows = src.rows();
        let mut normalized = vec![0.0f32; src.len()];
        let mut inv_std = vec![0.0f32; rows];
        let mut out = vec![0.0f32; src.len()];
        for r in 0..rows {
            let row = &src.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                normalized[r * c + j] = h;
                out[r * c + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(src.shape().to_vec(), out)?;
        let needs = self.needs(&[xi, gi, bi]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                normalized,
                inv_std,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.data().iter().sum::<f32>();
        let needs = self.needs(&[xi]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(xi), needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        if v.is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s = v.data().iter().sum::<f32>() / v.len() as f32;
        let needs = self.needs(&[xi]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(xi), needs))
    }

    /// Sums over the last dimension: `[.., c]` becomes `[..]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        let c = v.cols();
        let data: Vec<f32> = (0..v.rows())
            .map(|r| v.data()[r * c..(r + 1) * c].iter().sum())
            .collect();
        let mut shape = v.shape()[..v.shape().len().saturating_sub(1)].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let needs = self.needs(&[xi]);
        Ok(self.push(Tensor::new(shape, data)?, Op::RowSum(xi), needs))
    }

    /// Keeps the `k` largest entries of each row (ties go to the lowest
    /// index) and zeroes the rest. Gradients flow only through kept entries.
    pub fn top_k_mask(&mut self, x: Var, k: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let width = self.nodes[xi].value.cols();
        if k == 0 || k > width {
            return Err(Error::invalid(
                "top_k_mask",
                format!("k = {k} outside [1, {width}]"),
            ));
        }
        self.top_k_inner(xi, k, None)
    }

    /// Like [`Tape::top_k_mask`] but selection is restricted to columns with
    /// `allowed[j] == true`; other columns are always zeroed. If fewer than
    /// `k` columns are allowed, all allowed columns are kept.
    pub fn top_k_mask_among(&mut self, x: Var, k: usize, allowed: &[bool]) -> Result<Var> {
        let xi = self.idx(x)?;
        let width = self.nodes[xi].value.cols();
        if allowed.len() != width {
            return Err(Error::Shape {
                op: "top_k_mask_among",
                lhs: self.nodes[xi].value.shape().to_vec(),
                rhs: vec![allowed.len()],
            });
        }
        if k == 0 {
            return Err(Error::invalid("top_k_mask_among", "k must be at least 1"));
        }
        self.top_k_inner(xi, k, Some(allowed))
    }

    fn top_k_inner(&mut self, xi: usize, k: usize, allowed: Option<&[bool]>) -> Result<Var> {
        let src = &self.nodes[xi].value;
        let c = src.cols();
        let mut kept = vec![false; src.len()];
        let mut out = vec![0.0f32; src.len()];
        let mut scratch: Vec<usize> = Vec::with_capacity(c);
        for r in 0..src.rows() {
            let row = &src.data()[r * c..(r + 1) * c];
            scratch.clear();
            scratch.extend((0..c).filter(|&j| allowed.is_none_or(|a| a[j])));
            for j in top_k_indices(row, k, &mut scratch) {
                kept[r * c + j] = true;
                out[r * c + j] = row[j];
            }
        }
        let out = Tensor::new(src.shape().to_vec(), out)?;
        let needs = self.needs(&[xi]);
        Ok(self.push(out, Op::TopK { x: xi, kept }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.clone().reshaped(shape.to_vec())?;
        let needs = self.needs(&[xi]);
        Ok(self.push(out, Op::Reshape(xi), needs))
    }

    /// `matrix · x` for a constant sparse matrix and dense `x[cols, d]`.
    pub fn spmm(&mut self, matrix: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let (n, d) = self.matrix_dims("spmm", xi)?;
        if n != matrix.cols() {
            return Err(Error::Shape {
                op: "spmm",
                lhs: vec![matrix.rows(), matrix.cols()],
                rhs: vec![n, d],
            });
        }
        let data = matrix.matmul_dense(self.nodes[xi].value.data(), d);
        let needs = self.needs(&[xi]);
        Ok(self.push(
            Tensor::new(vec![matrix.rows(), d], data)?,
            Op::SpMM {
                matrix: Arc::clone(matrix),
                x: xi,
            },
            needs,
        ))
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// leaf recorded with `requires_grad`. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward called twice on the same graph".into()));
        }
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![1.0]);
        let mut out = HashMap::new();

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    out.insert(i, t);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, || g.clone());
                    self.acc(&mut grads, *b, || g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    self.acc(&mut grads, *a, || g.iter().zip(vb).map(|(g, y)| g * y).collect());
                    self.acc(&mut grads, *b, || g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
                Op::AddRow { x, bias } => {
                    self.acc(&mut grads, *x, || g.clone());
                    let c = self.nodes[*bias].value.len();
                    self.acc(&mut grads, *bias, || {
                        let mut gb = vec![0.0f32; c];
                        for row in g.chunks(c) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        gb
                    });
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    self.acc(&mut grads, *x, || g.iter().map(|v| v * f).collect());
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, n, p) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    self.acc(&mut grads, *a, || gemm_nt(&g, vb.data(), m, p, n));
                    self.acc(&mut grads, *b, || gemm_tn(va.data(), &g, m, n, p));
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, n, p) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
                    self.acc(&mut grads, *a, || gemm_nn(&g, vb.data(), m, p, n));
                    self.acc(&mut grads, *b, || gemm_tn(&g, va.data(), m, p, n));
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (batch, m, n) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                    let p = node.value.shape()[2];
                    let (da, db) = (va.data(), vb.data());
                    let tb = *transpose_b;
                    self.acc(&mut grads, *a, || {
                        let mut ga = Vec::with_capacity(batch * m * n);
                        for t in 0..batch {
                            let g_t = &g[t * m * p..(t + 1) * m * p];
                            let b_t = &db[t * n * p..(t + 1) * n * p];
                            if tb {
                                ga.extend(gemm_nn(g_t, b_t, m, p, n));
                            } else {
                                ga.extend(gemm_nt(g_t, b_t, m, p, n));
                            }
                        }
                        ga
                    });
                    self.acc(&mut grads, *b, || {
                        let mut gb = Vec::with_capacity(batch * n * p);
                        for t in 0..batch {
                            let g_t = &g[t * m * p..(t + 1) * m * p];
                            let a_t = &da[t * m * n..(t + 1) * m * n];
                            if tb {
                                gb.extend(gemm_tn(g_t, a_t, m, p, n));
                            } else {
                                gb.extend(gemm_tn(a_t, g_t, m, n, p));
                            }
                        }
                        gb
                    });
                }
                Op::Gather { table, indices } => {
                    let tv = &self.nodes[*table].value;
                    let d = tv.cols();
                    let len = tv.len();
                    self.acc(&mut grads, *table, || {
                        let mut gt = vec![0.0f32; len];
                        for (r, &ix) in indices.iter().enumerate() {
                            axpy(1.0, &g[r * d..(r + 1) * d], &mut gt[ix * d..(ix + 1) * d]);
                        }
                        gt
                    });
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    self.acc(&mut grads, *x, || {
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()
                    });
                }
                Op::Log(x) => {
                    let xv = self.nodes[*x].value.data();
                    self.acc(&mut grads, *x, || g.iter().zip(xv).map(|(g, x)| g / x).collect());
                }
                Op::LogSigmoid(x) => {
                    let xv = self.nodes[*x].value.data();
                    self.acc(&mut grads, *x, || {
                        g.iter().zip(xv).map(|(g, x)| g * sigmoid(-x)).collect()
                    });
                }
                Op::Relu(x) => {
                    let xv = self.nodes[*x].value.data();
                    self.acc(&mut grads, *x, || {
                        g.iter()
                            .zip(xv)
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect()
                    });
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let c = y.cols();
                    self.acc(&mut grads, *x, || {
                        let mut gx = vec![0.0f32; y.len()];
                        for r in 0..y.rows() {
                            let yr = &y.data()[r * c..(r + 1) * c];
                            let gr = &g[r * c..(r + 1) * c];
                            let s = dot(yr, gr);
                            for j in 0..c {
                                gx[r * c + j] = yr[j] * (gr[j] - s);
                            }
                        }
                        gx
                    });
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let c = node.value.cols();
                    let rows = node.value.rows();
                    let gam = self.nodes[*gamma].value.data();
                    self.acc(&mut grads, *gamma, || {
                        let mut gg = vec![0.0f32; c];
                        for r in 0..rows {
                            for j in 0..c {
                                gg[j] += g[r * c + j] * normalized[r * c + j];
                            }
                        }
                        gg
                    });
                    self.acc(&mut grads, *beta, || {
                        let mut gb = vec![0.0f32; c];
                        for r in 0..rows {
                            for j in 0..c {
                                gb[j] += g[r * c + j];
                            }
                        }
                        gb
                    });
                    self.acc(&mut grads, *x, || {
                        let mut gx = vec![0.0f32; rows * c];
                        let nf = c as f32;
                        for r in 0..rows {
                            let h = &normalized[r * c..(r + 1) * c];
                            let dh: Vec<f32> = (0..c).map(|j| g[r * c + j] * gam[j]).collect();
                            let sum_dh: f32 = dh.iter().sum();
                            let sum_dh_h = dot(&dh, h);
                            for j in 0..c {
                                gx[r * c + j] =
                                    inv_std[r] / nf * (nf * dh[j] - sum_dh - h[j] * sum_dh_h);
                            }
                        }
                        gx
                    });
                }
                Op::Sum(x) => {
                    let n = self.nodes[*x].value.len();
                    self.acc(&mut grads, *x, || vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.nodes[*x].value.len();
                    self.acc(&mut grads, *x, || vec![g[0] / n as f32; n]);
                }
                Op::RowSum(x) => {
                    let xv = &self.nodes[*x].value;
                    let c = xv.cols();
                    let n = xv.len();
                    self.acc(&mut grads, *x, || {
                        let mut gx = vec![0.0f32; n];
                        for (r, chunk) in gx.chunks_mut(c).enumerate() {
                            chunk.fill(g[r]);
                        }
                        gx
                    });
                }
                Op::TopK { x, kept } => {
                    self.acc(&mut grads, *x, || {
                        g.iter()
                            .zip(kept)
                            .map(|(g, k)| if *k { *g } else { 0.0 })
                            .collect()
                    });
                }
                Op::Reshape(x) => {
                    self.acc(&mut grads, *x, || g.clone());
                }
                Op::SpMM { matrix, x } => {
                    let d = node.value.cols();
                    self.acc(&mut grads, *x, || matrix.transpose_matmul_dense(&g, d));
                }
            }
        }

        self.nodes.clear();
        self.consumed = true;
        Ok(Gradients {
            grads: out,
            generation: self.generation,
        })
    }

    fn acc<F>(&self, grads: &mut [Option<Vec<f32>>], target: usize, contribution: F)
    where
        F: FnOnce() -> Vec<f32>,
    {
        if !self.nodes[target].needs_grad {
            return;
        }
        let c = contribution();
        match &mut grads[target] {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(&c) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f32) -> f32 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Indices of the `k` largest values of `row` among `candidates`, ordered by
/// value descending with ties resolved toward the lowest index. `candidates`
/// is reordered in place.
pub fn top_k_indices(row: &[f32], k: usize, candidates: &mut [usize]) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
    }
    let mut chosen = candidates[..k].to_vec();
    chosen.sort_by(cmp);
    chosen
}
