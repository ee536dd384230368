//! GPT-2 style decoder over 14-channel observation tokens.
//!
//! ```text
//! tokens [T×14] → Linear(14, 4D) → GELU → Linear(4D, D) (+ positional table)
//!   → n_layer × { x + Attn(LN₁ x); x + MLP(LN₂ x) }
//!   → LN_f → Linear(D, 10)
//! ```
//!
//! The output of `LN_f` is the penultimate layer used for embeddings.

mod checkpoint;
mod config;
mod decoder;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{ModelConfig, PRESETS};
pub use decoder::KvDecoder;

use crate::data::{N_BANDS, N_CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::{causal_self_attention, AttentionWeights, Graph, Tensor, Var};

const INIT_STD: f64 = 0.02;
const TENSORS_PER_BLOCK: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> TensorSpec {
    TensorSpec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

/// Parameter tensors in storage order.
pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let (d, h) = (cfg.n_embd, cfg.hidden());
    let normal = Init::Normal(INIT_STD);
    let residual = Init::Normal(INIT_STD / (2.0 * cfg.n_layer.max(1) as f64).sqrt());
    let mut out = vec![
        spec("embed.fc.weight", &[cfg.in_channels, h], normal),
        spec("embed.fc.bias", &[h], Init::Zeros),
        spec("embed.proj.weight", &[h, d], normal),
        spec("embed.proj.bias", &[d], Init::Zeros),
    ];
    if cfg.positional {
        out.push(spec("pos", &[cfg.block_size, d], normal));
    }
    for l in 0..cfg.n_layer {
        let p = |s: &str| format!("blocks.{l}.{s}");
        out.extend([
            spec(p("ln1.gain"), &[d], Init::Ones),
            spec(p("ln1.bias"), &[d], Init::Zeros),
            spec(p("attn.qkv.weight"), &[d, 3 * d], normal),
            spec(p("attn.qkv.bias"), &[3 * d], Init::Zeros),
            spec(p("attn.proj.weight"), &[d, d], residual),
            spec(p("attn.proj.bias"), &[d], Init::Zeros),
            spec(p("ln2.gain"), &[d], Init::Ones),
            spec(p("ln2.bias"), &[d], Init::Zeros),
            spec(p("mlp.fc.weight"), &[d, h], normal),
            spec(p("mlp.fc.bias"), &[h], Init::Zeros),
            spec(p("mlp.proj.weight"), &[h, d], residual),
            spec(p("mlp.proj.bias"), &[d], Init::Zeros),
        ]);
    }
    out.extend([
        spec("ln_f.gain", &[d], Init::Ones),
        spec("ln_f.bias", &[d], Init::Zeros),
        spec("head.weight", &[d, cfg.out_channels], normal),
        spec("head.bias", &[cfg.out_channels], Init::Zeros),
    ]);
    out
}

pub fn param_count(cfg: &ModelConfig) -> u64 {
    cfg.param_count()
}

/// Model weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Deterministic initialization from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = tensor_specs(config);
    let mut tensors = Vec::with_capacity(specs.len());
    for s in &specs {
        let t = match s.init {
            Init::Zeros => Tensor::zeros(&s.shape),
            Init::Ones => Tensor::filled(&s.shape, 1.0),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                let n = s.shape.iter().product();
                let v = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
                Tensor::new(&s.shape, v)?
            }
        };
        tensors.push(t);
    }
    Ok(ModelParams {
        config: config.clone(),
        names: specs.into_iter().map(|s| s.name).collect(),
        tensors,
    })
}

struct Slots {
    pos: Option<usize>,
    blocks: usize,
    last: usize,
}

impl Slots {
    fn of(cfg: &ModelConfig) -> Self {
        let pos = cfg.positional.then_some(4);
        let blocks = 4 + cfg.positional as usize;
        Self {
            pos,
            blocks,
            last: blocks + cfg.n_layer * TENSORS_PER_BLOCK,
        }
    }
}

/// Output of one graph forward pass.
pub struct ForwardVars {
    /// `[B·T × D]` after the final layer norm.
    pub hidden: Var,
    /// `[B·T × 10]`.
    pub prediction: Var,
}

impl ModelParams {
    /// Assembles parameters from named tensors, checking them against the layout.
    pub fn from_tensors(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if specs.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        for (s, (n, t)) in specs.iter().zip(&named) {
            if &s.name != n || s.shape != t.shape() {
                return Err(Error::Config(format!(
                    "tensor {n} {:?} does not match layout {} {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn param_count(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64).sum()
    }

    /// Index and offset of the first non-finite scalar, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.tensors
            .iter()
            .enumerate()
            .find_map(|(i, t)| t.first_non_finite().map(|j| (i, j)))
    }

    /// Puts every tensor on `g`, trainable or constant.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param_ref(t)
                } else {
                    g.constant_ref(t)
                }
            })
            .collect()
    }

    fn check_tokens(&self, tokens: &Tensor, seq_len: usize) -> Result<usize> {
        let shape = tokens.shape();
        if shape.len() != 2 || shape[1] != N_CHANNELS {
            return Err(Error::shape("model input", shape, &[seq_len, N_CHANNELS]));
        }
        if seq_len == 0 || shape[0] == 0 {
            return Err(Error::EmptySequence);
        }
        if seq_len > self.config.block_size {
            return Err(Error::SequenceLength {
                len: seq_len,
                block_size: self.config.block_size,
            });
        }
        if shape[0] % seq_len != 0 {
            return Err(Error::shape("model input", shape, &[seq_len, N_CHANNELS]));
        }
        Ok(shape[0] / seq_len)
    }

    /// Records the forward pass of `tokens: [B·T × 14]` on `g`. Dropout is
    /// applied only when `rng` is given and the configured rate is positive.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        tokens: Var,
        seq_len: usize,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardVars> {
        self.check_tokens(g.value(tokens), seq_len)?;
        let cfg = &self.config;
        let slots = Slots::of(cfg);
        let rate = cfg.dropout;
        let mut drop = |g: &mut Graph<'_>, x: Var| match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => g.dropout(x, rate, r),
            _ => x,
        };

        let h = g.linear(tokens, vars[0], vars[1])?;
        let h = g.gelu(h);
        let mut x = g.linear(h, vars[2], vars[3])?;
        if let Some(p) = slots.pos {
            x = g.add_positional(x, vars[p], seq_len)?;
        }
        x = drop(g, x);

        for l in 0..cfg.n_layer {
            let w = &vars[slots.blocks + l * TENSORS_PER_BLOCK..][..TENSORS_PER_BLOCK];
            let a = g.layer_norm(x, w[0], w[1])?;
            let attn = AttentionWeights {
                qkv_weight: w[2],
                qkv_bias: w[3],
                proj_weight: w[4],
                proj_bias: w[5],
            };
            let a = causal_self_attention(g, a, &attn, cfg.n_head, seq_len)?;
            let a = drop(g, a);
            x = g.add(x, a)?;
            let m = g.layer_norm(x, w[6], w[7])?;
            let m = g.linear(m, w[8], w[9])?;
            let m = g.gelu(m);
            let m = g.linear(m, w[10], w[11])?;
            let m = drop(g, m);
            x = g.add(x, m)?;
        }

        let f = slots.last;
        let hidden = g.layer_norm(x, vars[f], vars[f + 1])?;
        let prediction = g.linear(hidden, vars[f + 2], vars[f + 3])?;
        Ok(ForwardVars { hidden, prediction })
    }

    fn run(&self, tokens: &Tensor, seq_len: usize) -> Result<(Tensor, Tensor)> {
        self.check_tokens(tokens, seq_len)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant_ref(tokens);
        let out = self.forward_graph(&mut g, &vars, x, seq_len, None)?;
        Ok((g.value(out.hidden).clone(), g.value(out.prediction).clone()))
    }

    /// Next-observation predictions `[T × 10]` for `tokens: [T × 14]`.
    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let t = tokens.shape().first().copied().unwrap_or(0);
        self.forward_batch(tokens, t)
    }

    /// Predictions for `B` packed sequences of length `seq_len`.
    pub fn forward_batch(&self, tokens: &Tensor, seq_len: usize) -> Result<Tensor> {
        Ok(self.run(tokens, seq_len)?.1)
    }

    /// Penultimate outputs `[B·T × D]`.
    pub fn hidden_batch(&self, tokens: &Tensor, seq_len: usize) -> Result<Tensor> {
        Ok(self.run(tokens, seq_len)?.0)
    }

    /// Mean penultimate output over the sequence.
    pub fn extract_embeddings(&self, tokens: &Tensor) -> Result<Vec<f32>> {
        let t = tokens.shape().first().copied().unwrap_or(0);
        Ok(self.extract_embeddings_batch(tokens, t)?.remove(0))
    }

    /// One mean embedding per packed sequence.
    pub fn extract_embeddings_batch(&self, tokens: &Tensor, seq_len: usize) -> Result<Vec<Vec<f32>>> {
        let hidden = self.hidden_batch(tokens, seq_len)?;
        let d = self.config.n_embd;
        Ok(hidden
            .data()
            .chunks(seq_len * d)
            .map(|seq| {
                let mut acc = vec![0.0f64; d];
                for row in seq.chunks(d) {
                    acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
                }
                acc.into_iter().map(|a| (a / seq_len as f64) as f32).collect()
            })
            .collect())
    }

    /// Mean Huber loss of predictions against `targets: [T × 10]`.
    pub fn loss(&self, tokens: &Tensor, targets: &Tensor, delta: f32) -> Result<f32> {
        let pred = self.forward(tokens)?;
        crate::numerics::ops::huber_loss(&pred, targets, delta)
    }

    /// Loss over packed sequences and its gradient for every tensor.
    pub fn loss_and_grads(
        &self,
        tokens: &Tensor,
        targets: &Tensor,
        seq_len: usize,
        delta: f32,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f32, Vec<Vec<f32>>)> {
        let batch = self.check_tokens(tokens, seq_len)?;
        if targets.shape() != [batch * seq_len, N_BANDS] {
            return Err(Error::shape("targets", targets.shape(), &[batch * seq_len, N_BANDS]));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, true);
        let x = g.constant_ref(tokens);
        let y = g.constant_ref(targets);
        let out = self.forward_graph(&mut g, &vars, x, seq_len, rng)?;
        let loss = g.huber_loss(out.prediction, y, delta)?;
        let value = g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        let per_tensor = vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, per_tensor))
    }
}

pub fn forward(params: &ModelParams, tokens: &Tensor) -> Result<Tensor> {
    params.forward(tokens)
}

pub fn loss(params: &ModelParams, tokens: &Tensor, targets: &Tensor, delta: f32) -> Result<f32> {
    params.loss(tokens, targets, delta)
}

pub fn extract_embeddings(params: &ModelParams, tokens: &Tensor) -> Result<Vec<f32>> {
    params.extract_embeddings(tokens)
}
