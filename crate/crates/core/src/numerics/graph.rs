//! Dynamic tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! saved for the backward pass. [`Graph::backward`] walks the tape in reverse
//! and accumulates gradients into every node that requires them. Graphs are
//! built fresh for each forward pass and dropped afterwards.

use std::borrow::Cow;

use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f32 = 1e-5;

const GELU_COEFF: f32 = 0.044_715;
// sqrt(2 / pi)
const GELU_SCALE: f32 = 0.797_884_6;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    AddPositional {
        x: Var,
        table: Var,
        seq_len: usize,
    },
    Scale(Var, f32),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Attention {
        qkv: Var,
        seq_len: usize,
        n_head: usize,
        probs: Vec<f32>,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Huber {
        pred: Var,
        target: Var,
        delta: f32,
    },
    Sum(Var),
    WeightedSum(Var, Vec<f32>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar with respect to every leaf that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked (parameters, checked inputs).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value.detached(), Op::Leaf, true)
    }

    /// A leaf treated as constant (data, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.detached(), Op::Leaf, false)
    }

    /// Borrowing form of [`Graph::param`]; the tensor's own gradient buffer is ignored.
    pub fn param_ref(&mut self, value: &'a Tensor) -> Var {
        self.push_node(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Borrowing form of [`Graph::constant`].
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.push_node(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_node(Cow::Owned(value), op, requires_grad)
    }

    fn push_node(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let shape = self.value(v).shape();
        match shape {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::shape(op, shape, &[0, 0])),
        }
    }

    /// `[M×K] · [K×N] → [M×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", va.shape(), vb.shape()));
        }
        let out: Vec<f32> = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a `[N]` bias to every row of an `[M×N]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.last_dim();
        if vb.len() != n {
            return Err(Error::shape("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(vb.data()).for_each(|(o, b)| *o += b);
        }
        let t = Tensor::new(vx.shape(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    /// `x · w + b` for `x: [M×K]`, `w: [K×N]`, `b: [N]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias)
    }

    /// Adds rows `0..seq_len` of a positional table to each length-`seq_len`
    /// sequence packed in `x: [B·T × D]`.
    pub fn add_positional(&mut self, x: Var, table: Var, seq_len: usize) -> Result<Var> {
        let (rows, d) = self.matrix_dims(x, "add_positional")?;
        let (block, d2) = self.matrix_dims(table, "add_positional")?;
        if d != d2 || seq_len == 0 || seq_len > block || rows % seq_len != 0 {
            return Err(Error::shape(
                "add_positional",
                self.value(x).shape(),
                self.value(table).shape(),
            ));
        }
        let tab = self.value(table).data();
        let mut out = self.value(x).data().to_vec();
        for (r, row) in out.chunks_mut(d).enumerate() {
            let t = r % seq_len;
            row.iter_mut()
                .zip(&tab[t * d..(t + 1) * d])
                .for_each(|(o, p)| *o += p);
        }
        let rg = self.rg(x) || self.rg(table);
        Ok(self.push(
            Tensor::new(&[rows, d], out)?,
            Op::AddPositional {
                x,
                table,
                seq_len,
            },
            rg,
        ))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let vx = self.value(x);
        let out = vx.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(vx.shape(), out).expect("same length");
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, factor), rg)
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let out = vx.data().iter().map(|&v| gelu_value(v)).collect();
        let t = Tensor::new(vx.shape(), out).expect("same length");
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Normalizes each row over the last dimension, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if d < 2 {
            return Err(Error::DegenerateNormalization { width: d });
        }
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.len() != d || vb.len() != d {
            return Err(Error::shape("layer_norm", vx.shape(), vg.shape()));
        }
        let rows = vx.rows();
        let mut xhat = vec![0.0f32; vx.len()];
        let mut rstd = vec![0.0f32; rows];
        let mut out = vec![0.0f32; vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let c = v as f64 - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
            rstd[r] = rs as f32;
            for c in 0..d {
                let h = ((row[c] as f64 - mean) * rs) as f32;
                xhat[r * d + c] = h;
                out[r * d + c] = h * vg.data()[c] + vb.data()[c];
            }
        }
        let t = Tensor::new(vx.shape(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head causal attention core.
    ///
    /// `qkv` is `[B·T × 3D]` with queries, keys and values side by side; the
    /// result is `[B·T × D]`. Position `i` attends to positions `0..=i` of its
    /// own sequence only.
    pub fn causal_attention(&mut self, qkv: Var, seq_len: usize, n_head: usize) -> Result<Var> {
        let (rows, width) = self.matrix_dims(qkv, "causal_attention")?;
        if width % 3 != 0 || seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::shape(
                "causal_attention",
                self.value(qkv).shape(),
                &[seq_len, n_head],
            ));
        }
        let d = width / 3;
        if n_head == 0 || d % n_head != 0 {
            return Err(Error::Config(format!(
                "embedding width {d} is not divisible by {n_head} heads"
            )));
        }
        let hd = d / n_head;
        let batch = rows / seq_len;
        let scale = 1.0 / (hd as f32).sqrt();
        let src = self.value(qkv).data();
        let mut out = vec![0.0f32; rows * d];
        let mut probs = vec![0.0f32; batch * n_head * seq_len * seq_len];
        let mut scores = vec![0.0f32; seq_len];
        for b in 0..batch {
            for h in 0..n_head {
                let pbase = (b * n_head + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let qrow = (b * seq_len + i) * width + h * hd;
                    let q = &src[qrow..qrow + hd];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..=i {
                        let krow = (b * seq_len + j) * width + d + h * hd;
                        let s = dot(q, &src[krow..krow + hd]) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let mut total = 0.0f32;
                    for s in scores.iter_mut().take(i + 1) {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let p = &mut probs[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                    for j in 0..=i {
                        p[j] = scores[j] / total;
                    }
                    let orow = (b * seq_len + i) * d + h * hd;
                    let o = &mut out[orow..orow + hd];
                    for j in 0..=i {
                        let vrow = (b * seq_len + j) * width + 2 * d + h * hd;
                        axpy(p[j], &src[vrow..vrow + hd], o);
                    }
                }
            }
        }
        let rg = self.rg(qkv);
        Ok(self.push(
            Tensor::new(&[rows, d], out)?,
            Op::Attention {
                qkv,
                seq_len,
                n_head,
                probs,
            },
            rg,
        ))
    }

    /// Inverted dropout with keep-probability `1 - rate`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f32, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let vx = self.value(x);
        let mask: Vec<f32> = (0..vx.len())
            .map(|_| {
                if rng.random::<f32>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let out = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(vx.shape(), out).expect("same length");
        let rg = self.rg(x);
        self.push(t, Op::Dropout { x, mask }, rg)
    }

    /// Mean Huber loss between two same-shape tensors.
    pub fn huber_loss(&mut self, pred: Var, target: Var, delta: f32) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(Error::shape("huber_loss", vp.shape(), vt.shape()));
        }
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("huber delta must be positive, got {delta}")));
        }
        let n = vp.len().max(1) as f64;
        let total: f64 = vp
            .data()
            .iter()
            .zip(vt.data())
            .map(|(&p, &t)| huber_value((p - t) as f64, delta as f64))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar((total / n) as f32),
            Op::Huber {
                pred,
                target,
                delta,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total as f32), Op::Sum(x), rg)
    }

    /// `Σ wᵢ xᵢ` with fixed weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f32>) -> Result<Var> {
        let vx = self.value(x);
        if vx.len() != weights.len() {
            return Err(Error::shape("weighted_sum", vx.shape(), &[weights.len()]));
        }
        let total: f64 = vx
            .data()
            .iter()
            .zip(&weights)
            .map(|(&v, &w)| v as f64 * w as f64)
            .sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(total as f32), Op::WeightedSum(x, weights), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_len = self.value(root).len();
        if root_len != 1 {
            return Err(Error::shape("backward", self.value(root).shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f32>>], v: Var) -> Option<&'g mut [f32]> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn backprop_node(&self, node: &Node<'_>, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let gm = MatRef::new(g, m, n);
                if let Some(da) = self.slot(grads, *a) {
                    gemm(gm, MatRef::new(vb.data(), k, n).t(), da, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(MatRef::new(va.data(), m, k).t(), gm, db, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                let n = self.value(*bias).len();
                if let Some(db) = self.slot(grads, *bias) {
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::AddPositional {
                x,
                table,
                seq_len,
            } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                let d = self.value(*table).last_dim();
                if let Some(dt) = self.slot(grads, *table) {
                    for (r, row) in g.chunks(d).enumerate() {
                        let t = r % seq_len;
                        dt[t * d..(t + 1) * d]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Scale(x, factor) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor);
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &g), &v) in dx.iter_mut().zip(g).zip(vx) {
                        *d += g * gelu_derivative(v);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let dim = self.value(*gain).len();
                let gamma = self.value(*gain).data().to_vec();
                if let Some(dg) = self.slot(grads, *gain) {
                    for (grow, hrow) in g.chunks(dim).zip(xhat.chunks(dim)) {
                        for c in 0..dim {
                            dg[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for grow in g.chunks(dim) {
                        db.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0f32; dim];
                    for (r, (grow, hrow)) in g.chunks(dim).zip(xhat.chunks(dim)).enumerate() {
                        let mut mean_d = 0.0f32;
                        let mut mean_dh = 0.0f32;
                        for c in 0..dim {
                            dxhat[c] = grow[c] * gamma[c];
                            mean_d += dxhat[c];
                            mean_dh += dxhat[c] * hrow[c];
                        }
                        mean_d /= dim as f32;
                        mean_dh /= dim as f32;
                        let out = &mut dx[r * dim..(r + 1) * dim];
                        for c in 0..dim {
                            out[c] += rstd[r] * (dxhat[c] - mean_d - hrow[c] * mean_dh);
                        }
                    }
                }
            }
            Op::Attention {
                qkv,
                seq_len,
                n_head,
                probs,
            } => {
                let src = self.value(*qkv).data();
                let width = self.value(*qkv).last_dim();
                let Some(dsrc) = self.slot(grads, *qkv) else {
                    return;
                };
                attention_backward(src, width, *seq_len, *n_head, probs, g, dsrc);
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, g), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                }
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let vp = self.value(*pred).data();
                let vt = self.value(*target).data();
                let scale = g[0] / vp.len().max(1) as f32;
                let residual_grad = |i: usize| (vp[i] - vt[i]).clamp(-*delta, *delta) * scale;
                if let Some(dp) = self.slot(grads, *pred) {
                    for (i, d) in dp.iter_mut().enumerate() {
                        *d += residual_grad(i);
                    }
                }
                if let Some(dt) = self.slot(grads, *target) {
                    for (i, d) in dt.iter_mut().enumerate() {
                        *d -= residual_grad(i);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::WeightedSum(x, w) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(w).for_each(|(d, w)| *d += g[0] * w);
                }
            }
        }
    }
}

fn attention_backward(
    src: &[f32],
    width: usize,
    seq_len: usize,
    n_head: usize,
    probs: &[f32],
    g: &[f32],
    dsrc: &mut [f32],
) {
    let d = width / 3;
    let hd = d / n_head;
    let batch = src.len() / (width * seq_len);
    let scale = 1.0 / (hd as f32).sqrt();
    let mut dp = vec![0.0f32; seq_len];
    for b in 0..batch {
        for h in 0..n_head {
            let pbase = (b * n_head + h) * seq_len * seq_len;
            for i in 0..seq_len {
                let p = &probs[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                let grow = (b * seq_len + i) * d + h * hd;
                let gout = &g[grow..grow + hd];
                let mut weighted = 0.0f32;
                for j in 0..=i {
                    let vrow = (b * seq_len + j) * width + 2 * d + h * hd;
                    dp[j] = dot(gout, &src[vrow..vrow + hd]);
                    weighted += p[j] * dp[j];
                    axpy(p[j], gout, &mut dsrc[vrow..vrow + hd]);
                }
                let qrow = (b * seq_len + i) * width + h * hd;
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = (b * seq_len + j) * width + d + h * hd;
                    // dq_i += ds * k_j ; dk_j += ds * q_i
                    for c in 0..hd {
                        let k = src[krow + c];
                        let q = src[qrow + c];
                        dsrc[qrow + c] += ds * k;
                        dsrc[krow + c] += ds * q;
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Logistic function through a branch-free `exp`, so loops over it
/// vectorize. Relative error stays below 1e-6.
#[inline]
fn sigmoid_exp(x: f32) -> f32 {
    1.0 / (1.0 + exp_approx(-x))
}

/// `exp` by range reduction to `[−ln2/2, ln2/2]` and a degree-6 polynomial.
#[inline]
fn exp_approx(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5 · 2^23
    let x = x.clamp(-87.0, 88.0);
    let k = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - k * 0.693_145_75 - k * 1.428_606_8e-6;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    let scale = f32::from_bits(((k as i32 + 127) as u32) << 23);
    p * scale
}

pub fn gelu_value(x: f32) -> f32 {
    let inner = GELU_SCALE * (x + GELU_COEFF * x * x * x);
    // 0.5·(1 + tanh u) = σ(2u), which avoids cancellation for negative x
    x * sigmoid_exp(2.0 * inner)
}

fn gelu_derivative(x: f32) -> f32 {
    let inner = GELU_SCALE * (x + GELU_COEFF * x * x * x);
    let sig = sigmoid_exp(2.0 * inner);
    let dinner = GELU_SCALE * (1.0 + 3.0 * GELU_COEFF * x * x);
    sig + 2.0 * x * sig * (1.0 - sig) * dinner
}

/// Per-element Huber penalty.
pub fn huber_value(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}
