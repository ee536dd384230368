//! Incremental inference with cached keys and values.

use super::{ModelParams, Slots, TENSORS_PER_BLOCK};
use crate::data::{N_BANDS, N_CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::gemm::{gemm, MatRef};
use crate::numerics::{gelu_value, Tensor, LAYER_NORM_EPS};

/// Runs `B` sequences forward one position at a time, reusing the keys and
/// values of earlier positions. Agrees with [`ModelParams::forward_batch`] up
/// to float rounding.
pub struct KvDecoder<'p> {
    params: &'p ModelParams,
    batch: usize,
    len: usize,
    /// Per layer, `[B × block × D]` keys then values.
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

fn linear(x: &[f32], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f32> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut out: Vec<f32> = b.data().iter().copied().cycle().take(rows * n).collect();
    gemm(MatRef::new(x, rows, k), MatRef::new(w.data(), k, n), &mut out, 1.0);
    out
}

fn layer_norm(x: &[f32], d: usize, gain: &Tensor, bias: &Tensor) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
        for c in 0..d {
            let h = ((row[c] as f64 - mean) * rs) as f32;
            o[c] = h * gain.data()[c] + bias.data()[c];
        }
    }
    out
}

impl<'p> KvDecoder<'p> {
    pub fn new(params: &'p ModelParams, batch: usize) -> Self {
        let cfg = params.config();
        let cache = batch * cfg.block_size * cfg.n_embd;
        Self {
            params,
            batch,
            len: 0,
            keys: vec![vec![0.0; cache]; cfg.n_layer],
            values: vec![vec![0.0; cache]; cfg.n_layer],
        }
    }

    /// Positions already processed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn reset(&mut self) {
        self.len = 0;
    }

    /// Appends one token per sequence (`tokens: [B × 14]`) and returns the
    /// next-observation prediction of each sequence.
    pub fn push(&mut self, tokens: &[f32]) -> Result<Vec<[f32; N_BANDS]>> {
        let cfg = self.params.config();
        let (b, d) = (self.batch, cfg.n_embd);
        if tokens.len() != b * N_CHANNELS {
            return Err(Error::shape("decoder input", &[tokens.len()], &[b, N_CHANNELS]));
        }
        if self.len >= cfg.block_size {
            return Err(Error::SequenceLength {
                len: self.len + 1,
                block_size: cfg.block_size,
            });
        }
        let t = self.params.tensors();
        let slots = Slots::of(cfg);
        let pos = self.len;

        let h: Vec<f32> = linear(tokens, b, &t[0], &t[1]).into_iter().map(gelu_value).collect();
        let mut x = linear(&h, b, &t[2], &t[3]);
        if let Some(p) = slots.pos {
            let row = &t[p].data()[pos * d..(pos + 1) * d];
            x.chunks_mut(d).for_each(|r| r.iter_mut().zip(row).for_each(|(v, p)| *v += p));
        }

        let n_head = cfg.n_head;
        let hd = d / n_head;
        let scale = 1.0 / (hd as f32).sqrt();
        let block = cfg.block_size;
        let mut scores = vec![0.0f32; pos + 1];
        for l in 0..cfg.n_layer {
            let w = &t[slots.blocks + l * TENSORS_PER_BLOCK..][..TENSORS_PER_BLOCK];
            let a = layer_norm(&x, d, &w[0], &w[1]);
            let qkv = linear(&a, b, &w[2], &w[3]);
            let (keys, values) = (&mut self.keys[l], &mut self.values[l]);
            for s in 0..b {
                let at = (s * block + pos) * d;
                keys[at..at + d].copy_from_slice(&qkv[s * 3 * d + d..s * 3 * d + 2 * d]);
                values[at..at + d].copy_from_slice(&qkv[s * 3 * d + 2 * d..s * 3 * d + 3 * d]);
            }
            let mut mixed = vec![0.0f32; b * d];
            for s in 0..b {
                for head in 0..n_head {
                    let q = &qkv[s * 3 * d + head * hd..][..hd];
                    let mut max = f32::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let k = &keys[(s * block + j) * d + head * hd..][..hd];
                        *sc = q.iter().zip(k).map(|(x, y)| x * y).sum::<f32>() * scale;
                        max = max.max(*sc);
                    }
                    let mut total = 0.0f32;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        total += *sc;
                    }
                    let o = &mut mixed[s * d + head * hd..][..hd];
                    for (j, sc) in scores.iter().enumerate() {
                        let p = sc / total;
                        let v = &values[(s * block + j) * d + head * hd..][..hd];
                        o.iter_mut().zip(v).for_each(|(o, v)| *o += p * v);
                    }
                }
            }
            let attn = linear(&mixed, b, &w[4], &w[5]);
            x.iter_mut().zip(&attn).for_each(|(x, a)| *x += a);
            let m = layer_norm(&x, d, &w[6], &w[7]);
            let m: Vec<f32> = linear(&m, b, &w[8], &w[9]).into_iter().map(gelu_value).collect();
            let m = linear(&m, b, &w[10], &w[11]);
            x.iter_mut().zip(&m).for_each(|(x, m)| *x += m);
        }
        let f = slots.last;
        let hidden = layer_norm(&x, d, &t[f], &t[f + 1]);
        let pred = linear(&hidden, b, &t[f + 2], &t[f + 3]);
        self.len += 1;
        Ok(pred
            .chunks(N_BANDS)
            .map(|r| {
                let mut v = [0.0; N_BANDS];
                v.copy_from_slice(r);
                v
            })
            .collect())
    }
}
