//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`].
//! Nodes are only ever appended, so node order is already a topological
//! order and [`Tape::backward`] walks it once in reverse.

use super::array::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    AddTiled(Var, Var),
    Mul(Var, Var),
    MaskMul(Var, Vec<f64>),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    SumAll(Var),
    LogPick {
        probs: Var,
        index: Vec<usize>,
        coeff: Vec<f64>,
        floor: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

/// Batch statistics produced by a train-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// Batched product over a leading group axis: `[G,m,k]·[G,k,n]`, or
    /// `[G,m,k]·[G,n,k]ᵀ` when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bad = || Error::shape(format!("batch_matmul {:?} x {:?}", ta.shape(), tb.shape()));
        if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(bad());
        }
        let (g, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (kb, n) = if transpose_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let a_s = &ta.data()[gi * m * k..(gi + 1) * m * k];
            let b_s = &tb.data()[gi * k * n..(gi + 1) * k * n];
            let o_s = &mut out[gi * m * n..(gi + 1) * m * n];
            if transpose_b {
                gemm_nt_acc(a_s, b_s, o_s, m, k, n);
            } else {
                gemm_acc(a_s, b_s, o_s, m, k, n);
            }
        }
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::new(vec![g, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// `x + tile(p)`: `p` is repeated over `x` in row-major order. Covers
    /// bias addition (`p` of length = last dim) and positional tables.
    pub fn add_tiled(&mut self, x: Var, p: Var) -> Result<Var> {
        let (tx, tp) = (self.value(x), self.value(p));
        if tp.len() > tx.len() || tx.len() % tp.len() != 0 {
            return Err(Error::shape(format!(
                "cannot tile {:?} over {:?}",
                tp.shape(),
                tx.shape()
            )));
        }
        let plen = tp.len();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tp.data()[i % plen])
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.ng(x) || self.ng(p);
        Ok(self.push(t, Op::AddTiled(x, p), needs))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("mul {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Elementwise product with a fixed (non-differentiable) mask.
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if mask.len() != tx.len() {
            return Err(Error::shape("mask length differs from input"));
        }
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.ng(x);
        Ok(self.push(t, Op::MaskMul(x, mask), needs))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x).map(|v| v * s);
        let needs = self.ng(x);
        self.push(t, Op::Scale(x, s), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let needs = self.ng(x);
        self.push(t, Op::Relu(x), needs)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let needs = self.ng(x);
        self.push(t, Op::SoftmaxRows(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        let mut seen = vec![false; tx.rank()];
        if perm.len() != tx.rank() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(format!("bad permutation {perm:?} for {:?}", tx.shape())));
        }
        let (data, shape) = permute_data(tx.data(), tx.shape(), &perm);
        let t = Tensor::new(shape, data)?;
        let needs = self.ng(x);
        Ok(self.push(t, Op::Permute(x, perm), needs))
    }

    /// Batch normalization over all rows of `x` (channels = last axis) using
    /// the statistics of this batch. Returns the biased batch moments.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchMoments)> {
        let tx = self.value(x);
        let c = tx.cols();
        let rows = tx.rows();
        self.check_affine(gamma, beta, c)?;
        let mut mean = vec![0.0; c];
        for row in tx.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in tx.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchMoments { mean, var }))
    }

    /// Batch normalization with fixed statistics (evaluation mode).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.value(x).cols();
        self.check_affine(gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("running statistics length differs from channels"));
        }
        let inv_std = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "batch norm affine params must have {c} channels"
            )));
        }
        Ok(())
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(tx.len());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    /// `Σₙ coeff[n] · ln(max(probs[n, index[n]], floor))` for a `[N×K]` input.
    /// The floor also cuts the gradient below it.
    pub fn log_pick(
        &mut self,
        probs: Var,
        index: Vec<usize>,
        coeff: Vec<f64>,
        floor: f64,
    ) -> Result<Var> {
        let tp = self.value(probs);
        if tp.rank() != 2 || index.len() != tp.shape()[0] || coeff.len() != index.len() {
            return Err(Error::shape(format!(
                "log_pick over {:?} with {} indices and {} coefficients",
                tp.shape(),
                index.len(),
                coeff.len()
            )));
        }
        let k = tp.shape()[1];
        if index.iter().any(|&i| i >= k) {
            return Err(Error::shape("log_pick index out of range"));
        }
        let s: f64 = index
            .iter()
            .zip(&coeff)
            .enumerate()
            .map(|(n, (&i, &c))| c * tp.get2(n, i).max(floor).ln())
            .sum();
        let needs = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(s),
            Op::LogPick {
                probs,
                index,
                coeff,
                floor,
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !lt.data()[0].is_finite() {
            return Err(Error::Numerical(format!(
                "loss is not finite ({})",
                lt.data()[0]
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.needs_grad)
                    .map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn acc<'g>(
        &self,
        grads: &'g mut [Option<Vec<f64>>],
        v: Var,
    ) -> Option<&'g mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_nt_acc(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_tn_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (gs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = node.value.shape()[2];
                if let Some(ga) = self.acc(grads, *a) {
                    for gi in 0..gs {
                        let gc = &g[gi * m * n..(gi + 1) * m * n];
                        let bs = &tb.data()[gi * k * n..(gi + 1) * k * n];
                        let out = &mut ga[gi * m * k..(gi + 1) * m * k];
                        if *transpose_b {
                            gemm_acc(gc, bs, out, m, n, k);
                        } else {
                            gemm_nt_acc(gc, bs, out, m, n, k);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for gi in 0..gs {
                        let gc = &g[gi * m * n..(gi + 1) * m * n];
                        let as_ = &ta.data()[gi * m * k..(gi + 1) * m * k];
                        let out = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *transpose_b {
                            gemm_tn_acc(gc, as_, out, m, n, k);
                        } else {
                            gemm_tn_acc(as_, gc, out, m, k, n);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(o, d)| *o += d);
                    }
                }
            }
            Op::AddTiled(x, p) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d);
                }
                if let Some(gp) = self.acc(grads, *p) {
                    let plen = gp.len();
                    for (i, d) in g.iter().enumerate() {
                        gp[i % plen] += d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, d), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += d * y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((o, d), y) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += d * y;
                    }
                }
            }
            Op::MaskMul(x, mask) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((o, d), m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += d * m;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d * s);
                }
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for ((o, d), v) in gx.iter_mut().zip(g).zip(tx.data()) {
                        if *v > 0.0 {
                            *o += d;
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((gr, yr), or) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, d), yv) in or.iter_mut().zip(gr).zip(yr) {
                            *o += yv * (d - dot);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d);
                }
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (back, _) = permute_data(g, node.value.shape(), &inv);
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(&back).for_each(|(o, d)| *o += d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_dy[j] += gr[j];
                        sum_dy_xhat[j] += gr[j] * hr[j];
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    gg.iter_mut().zip(&sum_dy_xhat).for_each(|(o, d)| *o += d);
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    gb.iter_mut().zip(&sum_dy).for_each(|(o, d)| *o += d);
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let nf = rows as f64;
                    for ((gr, hr), or) in g.chunks(c).zip(xhat.chunks(c)).zip(gx.chunks_mut(c)) {
                        for j in 0..c {
                            let dxhat = gr[j] * gam[j];
                            if *batch_stats {
                                let t = dxhat
                                    - gam[j] * sum_dy[j] / nf
                                    - hr[j] * gam[j] * sum_dy_xhat[j] / nf;
                                or[j] += t * inv_std[j];
                            } else {
                                or[j] += dxhat * inv_std[j];
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::LogPick {
                probs,
                index,
                coeff,
                floor,
            } => {
                let tp = self.value(*probs);
                let k = tp.cols();
                if let Some(gp) = self.acc(grads, *probs) {
                    for (n, (&i, &c)) in index.iter().zip(coeff).enumerate() {
                        let p = tp.get2(n, i);
                        if p > *floor {
                            gp[n * k + i] += g[0] * c / p;
                        }
                    }
                }
            }
        }
    }
}

/// Permutes the axes of a row-major buffer; returns the data and new shape.
fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}
