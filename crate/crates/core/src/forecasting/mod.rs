//! Autoregressive rollout, the phase-folded climatology baseline and
//! per-lead-time L1 evaluation.

mod baseline;
mod report;

use rayon::prelude::*;

pub use baseline::{bin_of, phase_fold_baseline, PhaseFoldBaseline, BIN_DAYS, N_BINS};
pub use report::{
    evaluate_l1, format_reports, format_trajectories, parse_trajectories, percentile, write_reports,
    write_trajectories, Bucket, ForecastReport, IndexSpec, REPORT_HEADER, TRAJECTORY_HEADER,
};

use crate::data::{denormalize_reflectance, make_token, ObservationSeries, TokenSource, N_BANDS, N_CHANNELS};
use crate::dates::Day;
use crate::error::{Error, Result};
use crate::model::{KvDecoder, ModelParams};

/// Pixels handled by one batched forward pass during a rollout.
pub const ROLLOUT_CHUNK: usize = 32;

/// History tokens kept for a rollout of `horizon` steps.
///
/// With `horizon < block_size` the most recent `block_size − horizon` tokens
/// are kept, so the context never has to slide. Longer horizons start from a
/// single token and slide once the context fills the block.
pub fn history_budget(block_size: usize, horizon: usize) -> usize {
    block_size.saturating_sub(horizon).max(1)
}

/// Point forecast of `future.len()` steps for one pixel.
///
/// `history` holds normalized bands with their dates; the last history token
/// points at `future[0]`. Returns normalized predictions `[H][10]`.
pub fn rollout(
    params: &ModelParams,
    history: &[[f32; N_BANDS]],
    history_dates: &[Day],
    future: &[Day],
) -> Result<Vec<[f32; N_BANDS]>> {
    Ok(rollout_batch(params, &[history], history_dates, future)?.remove(0))
}

/// Rollout of several pixels sharing the same dates, packed into one batch.
pub fn rollout_batch(
    params: &ModelParams,
    histories: &[&[[f32; N_BANDS]]],
    history_dates: &[Day],
    future: &[Day],
) -> Result<Vec<Vec<[f32; N_BANDS]>>> {
    let n_hist = history_dates.len();
    if n_hist == 0 {
        return Err(Error::InsufficientHistory {
            needed: "at least one history observation".into(),
            got: "0".into(),
        });
    }
    if future.is_empty() {
        return Err(Error::Domain("forecast horizon must be at least 1".into()));
    }
    if future[0] <= history_dates[n_hist - 1] || future.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("future dates must be increasing and after the history".into()));
    }
    for h in histories {
        if h.len() != n_hist {
            return Err(Error::shape("rollout history", &[h.len()], &[n_hist]));
        }
    }
    let block = params.config().block_size;
    let horizon = future.len();
    let keep = history_budget(block, horizon).min(n_hist);
    let start = n_hist - keep;

    // Tokens of each pixel's context; a token's next-date channels are fixed
    // when it is created, so cached keys and values stay valid until the
    // window has to slide.
    let n = histories.len();
    let mut context: Vec<Vec<[f32; N_CHANNELS]>> = histories
        .iter()
        .map(|h| {
            (start..n_hist)
                .map(|i| {
                    let next = history_dates.get(i + 1).copied().unwrap_or(future[0]);
                    make_token(&h[i], history_dates[i], next)
                })
                .collect()
        })
        .collect();
    let mut decoder = KvDecoder::new(params, n);
    let mut out = vec![Vec::with_capacity(horizon); n];
    let mut input = vec![0.0f32; n * N_CHANNELS];
    for step in 0..horizon {
        let len = context[0].len();
        if len > block {
            context.iter_mut().for_each(|c| {
                c.drain(..len - block);
            });
            decoder.reset();
        }
        let mut last = Vec::new();
        for pos in decoder.len()..context[0].len() {
            for (c, row) in context.iter().zip(input.chunks_mut(N_CHANNELS)) {
                row.copy_from_slice(&c[pos]);
            }
            last = decoder.push(&input)?;
        }
        for ((pred, c), o) in last.into_iter().zip(context.iter_mut()).zip(out.iter_mut()) {
            o.push(pred);
            if let Some(&next) = future.get(step + 1) {
                c.push(make_token(&pred, future[step], next));
            }
        }
    }
    Ok(out)
}

/// Pixels, divergence date and horizon of a dataset forecast.
#[derive(Clone, Debug)]
pub struct ForecastRequest {
    /// Pixel indices; `None` selects all.
    pub pixels: Option<Vec<usize>>,
    /// First date the forecast may not see.
    pub divergence: Day,
    pub horizon: usize,
    /// Spacing of future dates; `None` uses the dataset's first interval.
    pub cadence_days: Option<u32>,
}

/// History length, history dates and future dates of a request.
#[derive(Clone, Debug)]
pub struct ForecastPlan {
    pub pixels: Vec<usize>,
    pub history_dates: Vec<Day>,
    pub future: Vec<Day>,
}

impl ForecastRequest {
    pub fn plan(&self, src: &dyn TokenSource) -> Result<ForecastPlan> {
        let n_time = src.n_time();
        if n_time == 0 {
            return Err(Error::InsufficientHistory { needed: "a non-empty dataset".into(), got: "0 dates".into() });
        }
        if self.divergence <= src.date(0) {
            return Err(Error::Domain(format!(
                "divergence date {} must be after the first observation {}",
                self.divergence,
                src.date(0)
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Domain("forecast horizon must be at least 1".into()));
        }
        let cadence = match self.cadence_days {
            Some(0) => return Err(Error::Domain("cadence must be positive".into())),
            Some(c) => c as i64,
            None if n_time >= 2 => src.date(1).days_since(src.date(0)),
            None => return Err(Error::Domain("cannot infer cadence from a single date".into())),
        };
        let last = src.date(n_time - 1);
        if self.divergence > last.plus(cadence) {
            return Err(Error::Domain(format!(
                "divergence date {} is past the end of the dataset {last}",
                self.divergence
            )));
        }
        let n_hist = src.steps_before(self.divergence);
        let history_dates: Vec<Day> = (0..n_hist).map(|t| src.date(t)).collect();
        let anchor = history_dates[n_hist - 1];
        let future = (1..=self.horizon as i64).map(|h| anchor.plus(h * cadence)).collect();
        let pixels = match &self.pixels {
            Some(p) => {
                if let Some(&bad) = p.iter().find(|&&i| i >= src.n_index()) {
                    return Err(Error::Domain(format!("pixel {bad} out of range (have {})", src.n_index())));
                }
                p.clone()
            }
            None => (0..src.n_index()).collect(),
        };
        Ok(ForecastPlan { pixels, history_dates, future })
    }
}

fn history_bands(src: &dyn TokenSource, pixel: usize, n_hist: usize) -> Vec<[f32; N_BANDS]> {
    let mut tok = [0.0f32; N_CHANNELS];
    (0..n_hist)
        .map(|t| {
            src.read_token(pixel, t, &mut tok);
            let mut b = [0.0; N_BANDS];
            b.copy_from_slice(&tok[..N_BANDS]);
            b
        })
        .collect()
}

fn raw_history(src: &dyn TokenSource, pixel: usize, dates: &[Day]) -> ObservationSeries {
    ObservationSeries {
        pixel_id: pixel as u64,
        dates: dates.to_vec(),
        reflectances: history_bands(src, pixel, dates.len())
            .into_iter()
            .map(|b| b.map(denormalize_reflectance))
            .collect(),
    }
}

/// Model forecasts on the raw scale, one series per requested pixel.
/// Pixels are processed in chunks in parallel.
pub fn forecast_dataset(params: &ModelParams, src: &dyn TokenSource, req: &ForecastRequest) -> Result<Vec<ObservationSeries>> {
    let plan = req.plan(src)?;
    let n_hist = plan.history_dates.len();
    let keep = history_budget(params.config().block_size, plan.future.len()).min(n_hist);
    let chunks: Vec<Vec<ObservationSeries>> = plan
        .pixels
        .par_chunks(ROLLOUT_CHUNK)
        .map(|chunk| {
            let hist: Vec<Vec<[f32; N_BANDS]>> = chunk
                .iter()
                .map(|&p| {
                    let mut h = history_bands(src, p, n_hist);
                    h.drain(..n_hist - keep);
                    h
                })
                .collect();
            let refs: Vec<&[[f32; N_BANDS]]> = hist.iter().map(|h| h.as_slice()).collect();
            let preds = rollout_batch(params, &refs, &plan.history_dates[n_hist - keep..], &plan.future)?;
            Ok(chunk
                .iter()
                .zip(preds)
                .map(|(&p, pred)| ObservationSeries {
                    pixel_id: p as u64,
                    dates: plan.future.clone(),
                    reflectances: pred.into_iter().map(|b| b.map(denormalize_reflectance)).collect(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Phase-folded baseline forecasts on the raw scale.
pub fn baseline_dataset(src: &dyn TokenSource, req: &ForecastRequest) -> Result<Vec<ObservationSeries>> {
    let plan = req.plan(src)?;
    plan.pixels
        .par_iter()
        .map(|&p| {
            let history = raw_history(src, p, &plan.history_dates);
            Ok(ObservationSeries {
                pixel_id: p as u64,
                dates: plan.future.clone(),
                reflectances: phase_fold_baseline(&history, &plan.future)?,
            })
        })
        .collect()
}

/// Observed raw values at the forecast dates; every future date must exist
/// in the dataset.
pub fn truth_dataset(src: &dyn TokenSource, req: &ForecastRequest) -> Result<Vec<ObservationSeries>> {
    let plan = req.plan(src)?;
    let mut steps = Vec::with_capacity(plan.future.len());
    for d in &plan.future {
        let t = src.steps_before(*d);
        if t >= src.n_time() || src.date(t) != *d {
            return Err(Error::Alignment(format!("forecast date {d} has no observation in the dataset")));
        }
        steps.push(t);
    }
    let mut tok = [0.0f32; N_CHANNELS];
    Ok(plan
        .pixels
        .iter()
        .map(|&p| ObservationSeries {
            pixel_id: p as u64,
            dates: plan.future.clone(),
            reflectances: steps
                .iter()
                .map(|&t| {
                    src.read_token(p, t, &mut tok);
                    std::array::from_fn(|b| denormalize_reflectance(tok[b]))
                })
                .collect(),
        })
        .collect())
}
