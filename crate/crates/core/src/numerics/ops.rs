//! Eager wrappers that evaluate a single differentiable op on a fresh graph.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.matmul(a, b)?;
    Ok(g.value(out).clone())
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let (gain, bias) = (g.constant(gain.clone()), g.constant(bias.clone()));
    let out = g.layer_norm(x, gain, bias)?;
    Ok(g.value(out).clone())
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let out = g.gelu(x);
    g.value(out).clone()
}

pub fn huber_loss(prediction: &Tensor, target: &Tensor, delta: f32) -> Result<f32> {
    let mut g = Graph::new();
    let p = g.constant(prediction.clone());
    let t = g.constant(target.clone());
    let out = g.huber_loss(p, t, delta)?;
    Ok(g.value(out).data()[0])
}

/// Weights of one causal self-attention layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    /// `[D × 3D]` fused query/key/value projection.
    pub qkv_weight: Var,
    pub qkv_bias: Var,
    /// `[D × D]` output projection.
    pub proj_weight: Var,
    pub proj_bias: Var,
}

/// Multi-head causal self-attention over `x: [B·T × D]`.
pub fn causal_self_attention(
    g: &mut Graph<'_>,
    x: Var,
    weights: &AttentionWeights,
    n_head: usize,
    seq_len: usize,
) -> Result<Var> {
    let qkv = g.linear(x, weights.qkv_weight, weights.qkv_bias)?;
    let mixed = g.causal_attention(qkv, seq_len, n_head)?;
    g.linear(mixed, weights.proj_weight, weights.proj_bias)
}
