//! Synthetic multispectral series.
//!
//! Each archetype is a summer and a winter reflectance profile plus the day
//! of year at which the summer profile peaks. Band `b` on day-of-year `d` is
//!
//! ```text
//! mid  = (summer[b] + winter[b]) / 2
//! amp  = (summer[b] − winter[b]) / 2
//! v    = brightness · (mid + a · amp · cos(2π (d − peak − jitter) / 365))
//!        + amp · rate · years + noise
//! ```
//!
//! clamped to `[0, 10000]`. Seasonality depends on the calendar day of year
//! only, so noise-free, trend-free, switch-free pixels repeat exactly on equal
//! days of year.
//!
//! | archetype | peak doy | summer (B G R RE1 RE2 RE3 RE4 NIR SW1 SW2) | winter |
//! |-----------|----------|---------------------------------------------|--------|
//! | cropland  | 185 | 300 600 300 900 2500 3200 3400 3500 2000 1000 | 700 900 1100 1300 1600 1800 1900 2000 2800 2200 |
//! | grassland | 150 | 350 650 450 1000 2200 2700 2900 3000 2200 1200 | 450 750 650 1100 1800 2200 2300 2400 2400 1500 |
//! | water     | 200 | 650 600 350 300 250 200 180 150 60 40 | 550 450 300 250 200 170 150 120 50 30 |
//! | bare      | 200 | 1100 1400 1800 2000 2100 2200 2300 2400 3300 2800 | 900 1200 1600 1800 1900 2000 2100 2200 3000 2500 |
//! | urban     | 190 | 1150 1250 1350 1450 1600 1700 1750 1800 2100 1900 | 1050 1150 1250 1350 1500 1600 1650 1700 2000 1800 |

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ObservationSeries, StorageType, TokenizedDataset, N_BANDS, RAW_MAX};
use crate::dates::{cadence_dates, Day};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchetypeKind {
    Cropland,
    Grassland,
    Water,
    Bare,
    Urban,
}

impl ArchetypeKind {
    pub const ALL: [ArchetypeKind; 5] = [
        ArchetypeKind::Cropland,
        ArchetypeKind::Grassland,
        ArchetypeKind::Water,
        ArchetypeKind::Bare,
        ArchetypeKind::Urban,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchetypeKind::Cropland => "cropland",
            ArchetypeKind::Grassland => "grassland",
            ArchetypeKind::Water => "water",
            ArchetypeKind::Bare => "bare",
            ArchetypeKind::Urban => "urban",
        }
    }
}

impl fmt::Display for ArchetypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchetypeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown archetype {s:?}")))
    }
}

/// Land-cover template with its mixture weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Archetype {
    pub kind: ArchetypeKind,
    pub weight: f64,
    pub summer: [f32; N_BANDS],
    pub winter: [f32; N_BANDS],
    pub peak_doy: f64,
}

impl Archetype {
    pub fn standard(kind: ArchetypeKind) -> Self {
        let (weight, summer, winter, peak_doy) = match kind {
            ArchetypeKind::Cropland => (
                0.35,
                [300., 600., 300., 900., 2500., 3200., 3400., 3500., 2000., 1000.],
                [700., 900., 1100., 1300., 1600., 1800., 1900., 2000., 2800., 2200.],
                185.0,
            ),
            ArchetypeKind::Grassland => (
                0.25,
                [350., 650., 450., 1000., 2200., 2700., 2900., 3000., 2200., 1200.],
                [450., 750., 650., 1100., 1800., 2200., 2300., 2400., 2400., 1500.],
                150.0,
            ),
            ArchetypeKind::Water => (
                0.10,
                [650., 600., 350., 300., 250., 200., 180., 150., 60., 40.],
                [550., 450., 300., 250., 200., 170., 150., 120., 50., 30.],
                200.0,
            ),
            ArchetypeKind::Bare => (
                0.15,
                [1100., 1400., 1800., 2000., 2100., 2200., 2300., 2400., 3300., 2800.],
                [900., 1200., 1600., 1800., 1900., 2000., 2100., 2200., 3000., 2500.],
                200.0,
            ),
            ArchetypeKind::Urban => (
                0.15,
                [1150., 1250., 1350., 1450., 1600., 1700., 1750., 1800., 2100., 1900.],
                [1050., 1150., 1250., 1350., 1500., 1600., 1650., 1700., 2000., 1800.],
                190.0,
            ),
        };
        Self {
            kind,
            weight,
            summer,
            winter,
            peak_doy,
        }
    }

    /// Noise-free reflectance on a day of year with the given phase shift and
    /// amplitude scale.
    pub fn profile(&self, day_of_year: f64, phase_shift: f64, amp_scale: f64) -> [f64; N_BANDS] {
        let c = (2.0 * PI * (day_of_year - self.peak_doy - phase_shift) / 365.0).cos();
        std::array::from_fn(|b| {
            let s = self.summer[b] as f64;
            let w = self.winter[b] as f64;
            (s + w) / 2.0 + amp_scale * (s - w) / 2.0 * c
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_pixels: usize,
    pub start: Day,
    pub end: Day,
    pub cadence_days: u32,
    pub archetypes: Vec<Archetype>,
    /// Raw-scale Gaussian noise standard deviation.
    pub noise_sigma: f64,
    /// Trend rates are drawn from `±trend_max`, in seasonal amplitudes per year.
    pub trend_max: f64,
    /// Per-year probability of a regime switch after the first year.
    pub regime_switch_prob: f64,
    /// Per-pixel phase jitter is drawn from `±phase_jitter_days`.
    pub phase_jitter_days: f64,
    /// Draw per-pixel brightness and amplitude scales; off gives exact archetype profiles.
    pub pixel_variation: bool,
    pub storage: StorageType,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pixels: 4096,
            start: Day::from_ymd(2015, 1, 1).expect("valid date"),
            end: Day::from_ymd(2023, 1, 1).expect("valid date"),
            cadence_days: 5,
            archetypes: ArchetypeKind::ALL.into_iter().map(Archetype::standard).collect(),
            noise_sigma: 50.0,
            trend_max: 0.05,
            regime_switch_prob: 0.15,
            phase_jitter_days: 15.0,
            pixel_variation: true,
            storage: StorageType::F16,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Noise-, trend- and switch-free variant of `self`.
    pub fn clean(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.trend_max = 0.0;
        self.regime_switch_prob = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pixels == 0 {
            return Err(Error::Config("n_pixels must be positive".into()));
        }
        if self.end <= self.start {
            return Err(Error::Config(format!(
                "end {} is not after start {}",
                self.end, self.start
            )));
        }
        if self.cadence_days == 0 {
            return Err(Error::Config("cadence must be at least one day".into()));
        }
        if self.archetypes.is_empty() {
            return Err(Error::Config("no archetypes".into()));
        }
        if self.archetypes.iter().any(|a| !(a.weight >= 0.0)) {
            return Err(Error::Config("archetype weights must be non-negative".into()));
        }
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("archetype weights sum to {total}, not 1")));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise sigma must be finite and non-negative".into()));
        }
        if !(self.trend_max >= 0.0) || !(self.phase_jitter_days >= 0.0) {
            return Err(Error::Config("trend and jitter ranges must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.regime_switch_prob) {
            return Err(Error::Config("regime-switch probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generated series with their ground-truth archetypes.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: TokenizedDataset,
    pub labels: Vec<ArchetypeKind>,
}

struct Switch {
    from: Day,
    phase: f64,
    amp_scale: f64,
}

fn symmetric(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn pixel_series(
    config: &SynthConfig,
    dates: &[Day],
    index: usize,
) -> Result<(ObservationSeries, ArchetypeKind)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let pick: f64 = rng.random();
    let mut acc = 0.0;
    let archetype = config
        .archetypes
        .iter()
        .find(|a| {
            acc += a.weight;
            pick < acc
        })
        .unwrap_or_else(|| config.archetypes.last().expect("validated non-empty"));

    let (brightness, amp_scale) = if config.pixel_variation {
        (rng.random_range(0.9..1.1), rng.random_range(0.8..1.2))
    } else {
        (1.0, 1.0)
    };
    let jitter = symmetric(&mut rng, config.phase_jitter_days);
    let rate = symmetric(&mut rng, config.trend_max);

    let mut switches = Vec::new();
    let (first_year, last_year) = (config.start.year(), config.end.year());
    for year in first_year + 1..=last_year {
        if config.regime_switch_prob > 0.0 && rng.random::<f64>() < config.regime_switch_prob {
            let from = Day::year_start(year)?.plus(rng.random_range(0..365));
            switches.push(Switch {
                from,
                phase: rng.random_range(-60.0..=60.0),
                amp_scale: rng.random_range(0.5..1.5),
            });
        }
    }

    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut reflectances = Vec::with_capacity(dates.len());
    for &day in dates {
        let (mut phase, mut scale) = (jitter, amp_scale);
        if let Some(s) = switches.iter().rev().find(|s| day >= s.from) {
            phase = jitter + s.phase;
            scale = amp_scale * s.amp_scale;
        }
        let base = archetype.profile(day.day_of_year() as f64, phase, scale);
        let years = day.days_since(config.start) as f64 / 365.25;
        let mut r = [0.0f32; N_BANDS];
        for (b, out) in r.iter_mut().enumerate() {
            let amp = (archetype.summer[b] - archetype.winter[b]).abs() as f64 / 2.0;
            let mut v = brightness * base[b] + amp * rate * years;
            if config.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            *out = v.clamp(0.0, RAW_MAX as f64) as f32;
        }
        reflectances.push(r);
    }
    Ok((
        ObservationSeries::new(index as u64, dates.to_vec(), reflectances)?,
        archetype.kind,
    ))
}

/// Raw series and labels. Pixel `i` uses its own RNG stream, so the result
/// does not depend on generation order.
pub fn synth_series(config: &SynthConfig) -> Result<(Vec<ObservationSeries>, Vec<ArchetypeKind>)> {
    config.validate()?;
    let dates = cadence_dates(config.start, config.end, config.cadence_days)?;
    if dates.len() < 2 {
        return Err(Error::Config("date range yields fewer than 2 observations".into()));
    }
    let mut series = Vec::with_capacity(config.n_pixels);
    let mut labels = Vec::with_capacity(config.n_pixels);
    for i in 0..config.n_pixels {
        let (s, k) = pixel_series(config, &dates, i)?;
        series.push(s);
        labels.push(k);
    }
    Ok((series, labels))
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput> {
    let (series, labels) = synth_series(config)?;
    let dataset = TokenizedDataset::from_series(&series, config.storage)?;
    Ok(SynthOutput { dataset, labels })
}

pub fn format_labels(labels: &[ArchetypeKind]) -> String {
    labels
        .iter()
        .enumerate()
        .map(|(i, k)| format!("{i},{k}\n"))
        .collect()
}

pub fn write_labels(labels: &[ArchetypeKind], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_labels(labels).as_bytes())
}

/// Parses `pixel_id,archetype_name` lines. Blank lines are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<(u64, ArchetypeKind)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            line: n + 1,
            reason,
        };
        let (id, name) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected pixel_id,archetype_name".into()))?;
        let id = id
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(format!("pixel id: {e}")))?;
        let kind = name.trim().parse().map_err(|e: Error| parse_err(e.to_string()))?;
        out.push((id, kind));
    }
    Ok(out)
}
