//! Observation series, preprocessing into tokens, synthetic generation and
//! the on-disk dataset format.

mod format;
mod synth;

use std::f64::consts::PI;

pub use format::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, DatasetHeader, DatasetView,
    MappedDataset, StorageType, HEADER_LEN,
};
pub use synth::{
    format_labels, parse_labels, synth_generate, synth_series, write_labels, Archetype, ArchetypeKind,
    SynthConfig, SynthOutput,
};

use crate::dates::Day;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const N_BANDS: usize = 10;
pub const N_CHANNELS: usize = 14;

/// Canonical band order of every reflectance vector.
pub const BAND_NAMES: [&str; N_BANDS] = [
    "blue", "green", "red", "red_edge_1", "red_edge_2", "red_edge_3", "red_edge_4", "nir",
    "swir_1", "swir_2",
];

pub mod band {
    pub const BLUE: usize = 0;
    pub const GREEN: usize = 1;
    pub const RED: usize = 2;
    pub const NIR: usize = 7;
    pub const SWIR1: usize = 8;
    pub const SWIR2: usize = 9;
}

pub const RAW_MAX: f32 = 10_000.0;
pub const DATE_PERIOD_DAYS: f64 = 365.0;

/// Raw 0–10,000 reflectance → model scale (`v / 500 − 1`).
pub fn normalize_reflectance(v: f32) -> f32 {
    v / 500.0 - 1.0
}

pub fn denormalize_reflectance(v: f32) -> f32 {
    500.0 * (v + 1.0)
}

/// Unit-circle encoding of the day of year with a 365-day period.
pub fn date_embedding(day_of_year: f64) -> (f32, f32) {
    let angle = 2.0 * PI * day_of_year / DATE_PERIOD_DAYS;
    (angle.sin() as f32, angle.cos() as f32)
}

pub fn day_embedding(day: Day) -> (f32, f32) {
    date_embedding(day.day_of_year() as f64)
}

/// One token: normalized bands of the current observation, then the date
/// encodings of the current and the next observation.
pub fn make_token(bands_normalized: &[f32], current: Day, next: Day) -> [f32; N_CHANNELS] {
    let mut token = [0.0; N_CHANNELS];
    token[..N_BANDS].copy_from_slice(&bands_normalized[..N_BANDS]);
    let (s, c) = day_embedding(current);
    let (sn, cn) = day_embedding(next);
    token[10] = s;
    token[11] = c;
    token[12] = sn;
    token[13] = cn;
    token
}

/// One pixel's dated raw reflectances.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSeries {
    pub pixel_id: u64,
    pub dates: Vec<Day>,
    pub reflectances: Vec<[f32; N_BANDS]>,
}

impl ObservationSeries {
    pub fn new(pixel_id: u64, dates: Vec<Day>, reflectances: Vec<[f32; N_BANDS]>) -> Result<Self> {
        if dates.len() != reflectances.len() {
            return Err(Error::shape("observation series", &[dates.len()], &[reflectances.len()]));
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "dates must be strictly increasing (position {})",
                i + 1
            )));
        }
        Ok(Self {
            pixel_id,
            dates,
            reflectances,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Observations with `start <= date < end`.
    pub fn window(&self, start: Day, end: Day) -> ObservationSeries {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.dates[i] >= start && self.dates[i] < end)
            .collect();
        ObservationSeries {
            pixel_id: self.pixel_id,
            dates: keep.iter().map(|&i| self.dates[i]).collect(),
            reflectances: keep.iter().map(|&i| self.reflectances[i]).collect(),
        }
    }
}

/// Model inputs and next-step targets for one series.
#[derive(Clone, Debug)]
pub struct TokenMatrix {
    /// `[T−1 × 14]`
    pub tokens: Tensor,
    /// `[T−1 × 10]`
    pub targets: Tensor,
    /// Raw values outside `[0, 10000]` seen while normalizing.
    pub out_of_range: usize,
}

/// Builds `T−1` tokens from a `T`-observation series. Token `i` carries
/// observation `i` and the dates of `i` and `i+1`; target `i` is observation
/// `i+1`. The last observation is only ever a target.
pub fn assemble_tokens(series: &ObservationSeries) -> Result<TokenMatrix> {
    let t = series.len();
    if t < 2 {
        return Err(Error::InsufficientHistory {
            needed: "2 observations".into(),
            got: format!("{t}"),
        });
    }
    let mut out_of_range = 0;
    let normalized: Vec<[f32; N_BANDS]> = series
        .reflectances
        .iter()
        .map(|r| {
            let mut n = [0.0; N_BANDS];
            for (o, &v) in n.iter_mut().zip(r) {
                if !(0.0..=RAW_MAX).contains(&v) {
                    out_of_range += 1;
                }
                *o = normalize_reflectance(v);
            }
            n
        })
        .collect();
    let mut tokens = Vec::with_capacity((t - 1) * N_CHANNELS);
    let mut targets = Vec::with_capacity((t - 1) * N_BANDS);
    for i in 0..t - 1 {
        tokens.extend_from_slice(&make_token(&normalized[i], series.dates[i], series.dates[i + 1]));
        targets.extend_from_slice(&normalized[i + 1]);
    }
    Ok(TokenMatrix {
        tokens: Tensor::new(&[t - 1, N_CHANNELS], tokens)?,
        targets: Tensor::new(&[t - 1, N_BANDS], targets)?,
        out_of_range,
    })
}

/// Normalized, date-embedded `[index, time, channel]` array with one shared
/// date vector.
///
/// The next-date channels of the final time step hold the cadence-extrapolated
/// date; that row is never used as a training input.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedDataset {
    n_index: usize,
    epoch: Day,
    date_offsets: Vec<i32>,
    storage: StorageType,
    data: Vec<f32>,
}

impl TokenizedDataset {
    /// Assembles a dataset from already-laid-out values, rounding them to the
    /// storage precision.
    pub fn from_parts(
        n_index: usize,
        epoch: Day,
        date_offsets: Vec<i32>,
        storage: StorageType,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        let expected = n_index
            .checked_mul(date_offsets.len())
            .and_then(|v| v.checked_mul(N_CHANNELS))
            .ok_or_else(|| Error::Config("dataset dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::shape(
                "dataset",
                &[n_index, date_offsets.len(), N_CHANNELS],
                &[data.len()],
            ));
        }
        if let Some(i) = date_offsets.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "dataset dates must be strictly increasing (position {})",
                i + 1
            )));
        }
        storage.quantize(&mut data);
        Ok(Self {
            n_index,
            epoch,
            date_offsets,
            storage,
            data,
        })
    }

    /// Tokenizes series that share one date vector.
    pub fn from_series(series: &[ObservationSeries], storage: StorageType) -> Result<Self> {
        let first = series.first().ok_or_else(|| Error::Config("no series".into()))?;
        let dates = &first.dates;
        if dates.len() < 2 {
            return Err(Error::InsufficientHistory {
                needed: "2 dates".into(),
                got: format!("{}", dates.len()),
            });
        }
        let epoch = dates[0];
        let date_offsets = dates
            .iter()
            .map(|d| i32::try_from(d.days_since(epoch)).map_err(|_| Error::Domain("date range too large".into())))
            .collect::<Result<Vec<_>>>()?;
        let n_time = dates.len();
        let step = dates[n_time - 1].days_since(dates[n_time - 2]);
        let next_dates: Vec<Day> = (0..n_time)
            .map(|t| {
                if t + 1 < n_time {
                    dates[t + 1]
                } else {
                    dates[t].plus(step)
                }
            })
            .collect();
        let mut data = Vec::with_capacity(series.len() * n_time * N_CHANNELS);
        for s in series {
            if &s.dates != dates {
                return Err(Error::Alignment(format!(
                    "pixel {} does not share the dataset date vector",
                    s.pixel_id
                )));
            }
            for t in 0..n_time {
                let mut bands = [0.0; N_BANDS];
                for (b, &v) in bands.iter_mut().zip(&s.reflectances[t]) {
                    *b = normalize_reflectance(v);
                }
                data.extend_from_slice(&make_token(&bands, dates[t], next_dates[t]));
            }
        }
        Self::from_parts(series.len(), epoch, date_offsets, storage, data)
    }

    pub fn n_index(&self) -> usize {
        self.n_index
    }

    pub fn n_time(&self) -> usize {
        self.date_offsets.len()
    }

    pub fn n_channel(&self) -> usize {
        N_CHANNELS
    }

    pub fn epoch(&self) -> Day {
        self.epoch
    }

    pub fn date_offsets(&self) -> &[i32] {
        &self.date_offsets
    }

    pub fn storage(&self) -> StorageType {
        self.storage
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn date(&self, time: usize) -> Day {
        self.epoch.plus(self.date_offsets[time] as i64)
    }

    pub fn dates(&self) -> Vec<Day> {
        (0..self.n_time()).map(|t| self.date(t)).collect()
    }

    /// Number of time steps dated strictly before `day`.
    pub fn steps_before(&self, day: Day) -> usize {
        self.date_offsets
            .partition_point(|&o| self.epoch.plus(o as i64) < day)
    }

    pub fn token(&self, index: usize, time: usize) -> &[f32] {
        let start = (index * self.n_time() + time) * N_CHANNELS;
        &self.data[start..start + N_CHANNELS]
    }

    /// All time steps of one pixel, `[n_time × 14]` flattened.
    pub fn pixel(&self, index: usize) -> &[f32] {
        let len = self.n_time() * N_CHANNELS;
        &self.data[index * len..(index + 1) * len]
    }

    /// Normalized band values of one observation.
    pub fn bands(&self, index: usize, time: usize) -> [f32; N_BANDS] {
        let mut out = [0.0; N_BANDS];
        out.copy_from_slice(&self.token(index, time)[..N_BANDS]);
        out
    }

    /// Raw-scale series of one pixel reconstructed from the stored bands.
    pub fn series(&self, index: usize) -> ObservationSeries {
        let reflectances = (0..self.n_time())
            .map(|t| self.bands(index, t).map(denormalize_reflectance))
            .collect();
        ObservationSeries {
            pixel_id: index as u64,
            dates: self.dates(),
            reflectances,
        }
    }
}

/// Read access to `[index, time, channel]` tokens, in memory or mapped.
pub trait TokenSource: Sync {
    fn n_index(&self) -> usize;
    fn n_time(&self) -> usize;
    fn date(&self, time: usize) -> Day;
    /// Copies token `(index, time)` into `out[..14]`.
    fn read_token(&self, index: usize, time: usize, out: &mut [f32]);

    fn steps_before(&self, day: Day) -> usize {
        (0..self.n_time()).take_while(|&t| self.date(t) < day).count()
    }
}

impl TokenSource for TokenizedDataset {
    fn n_index(&self) -> usize {
        self.n_index
    }

    fn n_time(&self) -> usize {
        self.date_offsets.len()
    }

    fn date(&self, time: usize) -> Day {
        TokenizedDataset::date(self, time)
    }

    fn read_token(&self, index: usize, time: usize, out: &mut [f32]) {
        out[..N_CHANNELS].copy_from_slice(self.token(index, time));
    }

    fn steps_before(&self, day: Day) -> usize {
        TokenizedDataset::steps_before(self, day)
    }
}

impl TokenSource for DatasetView<'_> {
    fn n_index(&self) -> usize {
        self.header().n_index
    }

    fn n_time(&self) -> usize {
        self.header().n_time
    }

    fn date(&self, time: usize) -> Day {
        self.header().epoch.plus(self.date_offsets()[time] as i64)
    }

    fn read_token(&self, index: usize, time: usize, out: &mut [f32]) {
        for (c, o) in out[..N_CHANNELS].iter_mut().enumerate() {
            *o = self.value(index, time, c);
        }
    }
}

/// Tokens in a dataset: one per (pixel, date).
pub fn count_tokens(n_index: usize, n_time: usize) -> u64 {
    n_index as u64 * n_time as u64
}

impl TokenizedDataset {
    pub fn count_tokens(&self) -> u64 {
        count_tokens(self.n_index, self.n_time())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_reflectance(500.0), 0.0);
        assert_eq!(normalize_reflectance(0.0), -1.0);
        assert_eq!(normalize_reflectance(10_000.0), 19.0);
        for v in [0.0f32, 1.0, 437.5, 2999.0, 10_000.0] {
            assert!((denormalize_reflectance(normalize_reflectance(v)) - v).abs() < 1e-3);
        }
    }

    #[test]
    fn date_embedding_examples() {
        let close = |a: (f32, f32), b: (f32, f32)| (a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6;
        assert!(close(date_embedding(0.0), (0.0, 1.0)));
        assert!(close(date_embedding(91.25), (1.0, 0.0)));
        assert!(close(date_embedding(182.5), (0.0, -1.0)));
    }

    fn series(t: usize) -> ObservationSeries {
        let start = Day::from_ymd(2015, 1, 1).unwrap();
        let dates = (0..t).map(|i| start.plus(5 * i as i64)).collect();
        let refl = (0..t)
            .map(|i| std::array::from_fn(|b| (100 * b + 7 * i) as f32 + 0.25))
            .collect();
        ObservationSeries::new(3, dates, refl).unwrap()
    }

    #[test]
    fn token_counts() {
        let m = assemble_tokens(&series(2)).unwrap();
        assert_eq!(m.tokens.shape(), &[1, 14]);
        assert_eq!(m.targets.shape(), &[1, 10]);
        for t in 2..100 {
            assert_eq!(assemble_tokens(&series(t)).unwrap().tokens.shape()[0], t - 1);
        }
        assert!(matches!(
            assemble_tokens(&series(1)),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn targets_invert_to_next_observation() {
        let s = series(20);
        let m = assemble_tokens(&s).unwrap();
        for i in 0..19 {
            for b in 0..N_BANDS {
                let raw = denormalize_reflectance(m.targets.row(i)[b]);
                assert!((raw - s.reflectances[i + 1][b]).abs() < 1e-2);
            }
            if i + 1 < 19 {
                assert_eq!(&m.tokens.row(i)[12..14], &m.tokens.row(i + 1)[10..12]);
            }
        }
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_tokens(1000, 100), 100_000);
        assert_eq!(count_tokens(0, 0), 0);
        assert_eq!(count_tokens(4096, 584), 2_392_064);
    }

    #[test]
    fn out_of_range_counted() {
        let mut s = series(3);
        s.reflectances[1][0] = -5.0;
        s.reflectances[2][3] = 12_000.0;
        assert_eq!(assemble_tokens(&s).unwrap().out_of_range, 2);
    }
}
