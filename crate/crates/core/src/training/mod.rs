//! Next-observation training: window sampling, Adam updates, the decay
//! schedule, loss logging and checkpoints.

mod log;
mod schedule;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use log::{LossLog, LossRow, LOSS_LOG_HEADER};
pub use schedule::{chinchilla_params, chinchilla_tokens, emissions, tokens_consumed, LrSchedule, LrShape};

use crate::data::{TokenSource, N_BANDS, N_CHANNELS};
use crate::dates::Day;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{write_checkpoint, ModelParams};
use crate::numerics::{adam_step, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Real tokens per optimizer step; a multiple of the window length.
    pub tokens_per_step: usize,
    /// Sequence length per sample; defaults to the model block size.
    pub window: Option<usize>,
    pub max_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_horizon_multiplier: f64,
    pub lr_shape: LrShape,
    pub warmup_steps: u64,
    pub huber_delta: f32,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Fraction of pixels held out for validation.
    pub val_fraction: f64,
    pub val_every: u64,
    pub val_windows: usize,
    pub log_every: u64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Only observations dated before this day are used.
    pub divergence: Option<Day>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 3000,
            tokens_per_step: 8192,
            window: None,
            max_lr: 1e-3,
            lr_decay_factor: 10.0,
            lr_horizon_multiplier: 1.1,
            lr_shape: LrShape::Cosine,
            warmup_steps: 0,
            huber_delta: 1.0,
            seed: 0,
            checkpoint_every: 0,
            val_fraction: 0.05,
            val_every: 100,
            val_windows: 32,
            log_every: 10,
            grad_clip: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            divergence: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            max_lr: self.max_lr,
            decay_factor: self.lr_decay_factor,
            horizon_multiplier: self.lr_horizon_multiplier,
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            shape: self.lr_shape,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        self.schedule().at(step)
    }

    /// Window length and sequences per batch for a model with `block_size`.
    pub fn batch_shape(&self, block_size: usize) -> Result<(usize, usize)> {
        let window = self.window.unwrap_or(block_size);
        if window == 0 || window > block_size {
            return Err(Error::Config(format!(
                "window {window} must be in 1..={block_size}"
            )));
        }
        if self.tokens_per_step == 0 || self.tokens_per_step % window != 0 {
            return Err(Error::Config(format!(
                "tokens_per_step {} is not a positive multiple of the window {window}",
                self.tokens_per_step
            )));
        }
        Ok((window, self.tokens_per_step / window))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if !(self.max_lr > 0.0) || !self.max_lr.is_finite() {
            return Err(Error::Config("max_lr must be positive".into()));
        }
        if !(self.lr_decay_factor >= 1.0) || !(self.lr_horizon_multiplier > 0.0) {
            return Err(Error::Config("lr_decay_factor must be ≥ 1 and lr_horizon_multiplier > 0".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config("huber_delta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.log_every == 0 || self.val_every == 0 {
            return Err(Error::Config("log_every and val_every must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            total_steps: kv.take_or("total_steps", d.total_steps)?,
            tokens_per_step: kv.take_or("tokens_per_step", d.tokens_per_step)?,
            window: kv.take("window")?,
            max_lr: kv.take_or("max_lr", d.max_lr)?,
            lr_decay_factor: kv.take_or("lr_decay_factor", d.lr_decay_factor)?,
            lr_horizon_multiplier: kv.take_or("lr_horizon_multiplier", d.lr_horizon_multiplier)?,
            lr_shape: kv.take_or("lr_shape", d.lr_shape)?,
            warmup_steps: kv.take_or("warmup_steps", d.warmup_steps)?,
            huber_delta: kv.take_or("huber_delta", d.huber_delta)?,
            seed: kv.take_or("seed", d.seed)?,
            checkpoint_every: kv.take_or("checkpoint_every", d.checkpoint_every)?,
            val_fraction: kv.take_or("val_fraction", d.val_fraction)?,
            val_every: kv.take_or("val_every", d.val_every)?,
            val_windows: kv.take_or("val_windows", d.val_windows)?,
            log_every: kv.take_or("log_every", d.log_every)?,
            grad_clip: kv.take("grad_clip")?,
            beta1: kv.take_or("beta1", d.beta1)?,
            beta2: kv.take_or("beta2", d.beta2)?,
            epsilon: kv.take_or("epsilon", d.epsilon)?,
            divergence: kv.take("divergence")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut pairs = vec![
            ("total_steps", self.total_steps.to_string()),
            ("tokens_per_step", self.tokens_per_step.to_string()),
            ("max_lr", self.max_lr.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_horizon_multiplier", self.lr_horizon_multiplier.to_string()),
            ("lr_shape", self.lr_shape.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("huber_delta", self.huber_delta.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("val_every", self.val_every.to_string()),
            ("val_windows", self.val_windows.to_string()),
            ("log_every", self.log_every.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
        ];
        if let Some(w) = self.window {
            pairs.push(("window", w.to_string()));
        }
        if let Some(c) = self.grad_clip {
            pairs.push(("grad_clip", c.to_string()));
        }
        if let Some(d) = self.divergence {
            pairs.push(("divergence", d.to_string()));
        }
        KeyValues::render(&pairs)
    }
}

/// Packed training sequences.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B·L × 14]`
    pub tokens: Tensor,
    /// `[B·L × 10]`
    pub targets: Tensor,
    pub seq_len: usize,
}

impl Batch {
    /// Tokens `offset..offset+L` of each pixel with the bands of the following
    /// observation as targets.
    pub fn assemble(src: &dyn TokenSource, windows: &[(usize, usize)], seq_len: usize) -> Result<Self> {
        let rows = windows.len() * seq_len;
        let mut tokens = vec![0.0f32; rows * N_CHANNELS];
        let mut targets = vec![0.0f32; rows * N_BANDS];
        let mut scratch = [0.0f32; N_CHANNELS];
        for (w, &(pixel, offset)) in windows.iter().enumerate() {
            if pixel >= src.n_index() || offset + seq_len >= src.n_time() {
                return Err(Error::InsufficientHistory {
                    needed: format!("{} time steps", offset + seq_len + 1),
                    got: format!("{}", src.n_time()),
                });
            }
            for i in 0..seq_len {
                let r = w * seq_len + i;
                src.read_token(pixel, offset + i, &mut tokens[r * N_CHANNELS..(r + 1) * N_CHANNELS]);
                src.read_token(pixel, offset + i + 1, &mut scratch);
                targets[r * N_BANDS..(r + 1) * N_BANDS].copy_from_slice(&scratch[..N_BANDS]);
            }
        }
        Ok(Self {
            tokens: Tensor::new(&[rows, N_CHANNELS], tokens)?,
            targets: Tensor::new(&[rows, N_BANDS], targets)?,
            seq_len,
        })
    }
}

/// Uniform `(pixel, offset)` sampling with a pixel-level validation split.
#[derive(Clone, Debug)]
pub struct WindowSampler {
    train: Vec<usize>,
    val: Vec<usize>,
    usable_time: usize,
    window: usize,
}

impl WindowSampler {
    pub fn new(n_index: usize, usable_time: usize, window: usize, val_fraction: f64, seed: u64) -> Result<Self> {
        if usable_time < window + 1 {
            return Err(Error::InsufficientHistory {
                needed: format!("{} time steps for window {window}", window + 1),
                got: format!("{usable_time}"),
            });
        }
        let mut pixels: Vec<usize> = (0..n_index).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        pixels.shuffle(&mut rng);
        let mut n_val = (val_fraction * n_index as f64).round() as usize;
        if val_fraction > 0.0 && n_index >= 2 {
            n_val = n_val.max(1);
        }
        n_val = n_val.min(n_index.saturating_sub(1));
        let val = pixels[..n_val].to_vec();
        let train = pixels[n_val..].to_vec();
        if train.is_empty() {
            return Err(Error::Config("no training pixels".into()));
        }
        Ok(Self {
            train,
            val,
            usable_time,
            window,
        })
    }

    pub fn train_pixels(&self) -> &[usize] {
        &self.train
    }

    pub fn val_pixels(&self) -> &[usize] {
        &self.val
    }

    fn draw(&self, pixels: &[usize], rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
        let max_offset = self.usable_time - self.window - 1;
        (0..n)
            .map(|_| {
                let p = pixels[rng.random_range(0..pixels.len())];
                (p, rng.random_range(0..=max_offset))
            })
            .collect()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
        self.draw(&self.train, rng, n)
    }

    pub fn sample_val(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
        if self.val.is_empty() {
            Vec::new()
        } else {
            self.draw(&self.val, rng, n)
        }
    }
}

/// Parameters with their optimizer state.
pub struct Trainer {
    params: ModelParams,
    moments: Vec<AdamState>,
    delta: f32,
    grad_clip: Option<f64>,
    dropout_rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(params: ModelParams, config: &TrainConfig) -> Self {
        let moments = params
            .tensors()
            .iter()
            .map(|t| AdamState::with_hyperparameters(t.len(), config.beta1, config.beta2, config.epsilon))
            .collect();
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(2);
        Self {
            params,
            moments,
            delta: config.huber_delta,
            grad_clip: config.grad_clip,
            dropout_rng,
            step: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One Adam update; returns the batch loss before the update.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<f32> {
        let abort = |step| Error::NumericalAbort {
            step,
            last_checkpoint: None,
        };
        let rng = (self.params.config().dropout > 0.0).then_some(&mut self.dropout_rng as &mut dyn rand::RngCore);
        let (loss, mut grads) =
            self.params
                .loss_and_grads(&batch.tokens, &batch.targets, batch.seq_len, self.delta, rng)?;
        if !loss.is_finite() {
            return Err(abort(self.step));
        }
        if let Some(max_norm) = self.grad_clip {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|&v| (v as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let s = (max_norm / norm) as f32;
                grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
            }
        }
        for ((t, g), m) in self.params.tensors_mut().iter_mut().zip(&grads).zip(&mut self.moments) {
            match adam_step(t, g, m, lr) {
                Err(Error::NonFinite { .. }) => return Err(abort(self.step)),
                other => other?,
            }
        }
        if self.params.first_non_finite().is_some() {
            return Err(abort(self.step));
        }
        self.step += 1;
        Ok(loss)
    }
}

/// Mean loss over windows, evaluated in chunks without gradients.
pub fn evaluate_loss(
    params: &ModelParams,
    src: &dyn TokenSource,
    windows: &[(usize, usize)],
    seq_len: usize,
    delta: f32,
) -> Result<f32> {
    if windows.is_empty() {
        return Err(Error::Config("no evaluation windows".into()));
    }
    let mut total = 0.0f64;
    for chunk in windows.chunks(16) {
        let b = Batch::assemble(src, chunk, seq_len)?;
        let pred = params.forward_batch(&b.tokens, seq_len)?;
        let l = crate::numerics::ops::huber_loss(&pred, &b.targets, delta)?;
        total += l as f64 * chunk.len() as f64;
    }
    Ok((total / windows.len() as f64) as f32)
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: LossLog,
    pub last_checkpoint: Option<PathBuf>,
}

/// Runs `config.total_steps` updates on windows drawn from `src`.
///
/// `on_row` sees every logged row as it is produced.
pub fn train(
    params: ModelParams,
    src: &dyn TokenSource,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_row: impl FnMut(&LossRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (window, n_seq) = config.batch_shape(params.config().block_size)?;
    let usable = match config.divergence {
        Some(d) => src.steps_before(d),
        None => src.n_time(),
    };
    let sampler = WindowSampler::new(src.n_index(), usable, window, config.val_fraction, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let val_windows = {
        let mut vr = ChaCha8Rng::seed_from_u64(config.seed);
        vr.set_stream(3);
        sampler.sample_val(&mut vr, config.val_windows)
    };
    let schedule = config.schedule();
    let tokens_per_step = config.tokens_per_step as u64;
    let mut trainer = Trainer::new(params, config);
    let mut log = LossLog::default();
    let mut last_checkpoint: Option<PathBuf> = None;
    let start = Instant::now();

    for step in 0..config.total_steps {
        let windows = sampler.sample(&mut rng, n_seq);
        let batch = Batch::assemble(src, &windows, window)?;
        let lr = schedule.at(step);
        let loss = trainer.step(&batch, lr).map_err(|e| match e {
            Error::NumericalAbort { step, .. } => Error::NumericalAbort {
                step,
                last_checkpoint: last_checkpoint.clone(),
            },
            other => other,
        })?;
        let done = step + 1;
        let last = done == config.total_steps;
        if done % config.log_every == 0 || last {
            let val_loss = if !val_windows.is_empty() && (done % config.val_every == 0 || last) {
                Some(evaluate_loss(trainer.params(), src, &val_windows, window, config.huber_delta)?)
            } else {
                None
            };
            let row = LossRow {
                step: done,
                tokens: tokens_consumed(done, tokens_per_step)?,
                train_loss: loss,
                val_loss,
                lr,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_row(&row);
            log.rows.push(row);
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (done % config.checkpoint_every == 0 || last) {
                let path = dir.join(format!("step_{done:07}.eock"));
                write_checkpoint(trainer.params(), done, &path)?;
                last_checkpoint = Some(path);
            }
        }
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        log,
        last_checkpoint,
    })
}
