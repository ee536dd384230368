use crate::data::{ObservationSeries, N_BANDS};
use crate::dates::Day;
use crate::error::{Error, Result};

pub const N_BINS: usize = 73;
pub const BIN_DAYS: u32 = 5;
const YEAR: f64 = 365.0;

/// Day-of-year climatology: 73 five-day bins averaged across years, read
/// back by linear interpolation between bin centers with wrap-around.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseFoldBaseline {
    /// `(center day-of-year, per-band mean)` of non-empty bins, by center.
    bins: Vec<(f64, [f64; N_BANDS])>,
}

pub fn bin_of(day_of_year: u32) -> usize {
    ((day_of_year / BIN_DAYS) as usize).min(N_BINS - 1)
}

impl PhaseFoldBaseline {
    /// Requires at least one full year between the first and last observation.
    pub fn fit(history: &ObservationSeries) -> Result<Self> {
        let span = match (history.dates.first(), history.dates.last()) {
            (Some(a), Some(b)) => b.days_since(*a),
            _ => 0,
        };
        if span < 365 {
            return Err(Error::InsufficientHistory {
                needed: "365 days of history".into(),
                got: format!("{span} days"),
            });
        }
        let mut sums = vec![[0.0f64; N_BANDS]; N_BINS];
        let mut doy_sum = vec![0.0f64; N_BINS];
        let mut counts = vec![0usize; N_BINS];
        for (d, r) in history.dates.iter().zip(&history.reflectances) {
            let doy = d.day_of_year();
            let b = bin_of(doy);
            counts[b] += 1;
            doy_sum[b] += doy as f64;
            for (s, &v) in sums[b].iter_mut().zip(r) {
                *s += v as f64;
            }
        }
        let bins = (0..N_BINS)
            .filter(|&b| counts[b] > 0)
            .map(|b| {
                let n = counts[b] as f64;
                (doy_sum[b] / n, sums[b].map(|s| s / n))
            })
            .collect();
        Ok(Self { bins })
    }

    /// Non-empty bins as `(center day-of-year, mean bands)`.
    pub fn bins(&self) -> &[(f64, [f64; N_BANDS])] {
        &self.bins
    }

    pub fn predict_day_of_year(&self, doy: f64) -> [f32; N_BANDS] {
        let n = self.bins.len();
        if n == 1 {
            return self.bins[0].1.map(|v| v as f32);
        }
        // First bin whose center lies after `doy`; its predecessor wraps.
        let hi = self.bins.partition_point(|(c, _)| *c <= doy);
        let (lo_c, lo_v, hi_c, hi_v) = if hi == 0 {
            let (lc, lv) = self.bins[n - 1];
            (lc - YEAR, lv, self.bins[0].0, self.bins[0].1)
        } else if hi == n {
            let (hc, hv) = self.bins[0];
            (self.bins[n - 1].0, self.bins[n - 1].1, hc + YEAR, hv)
        } else {
            (self.bins[hi - 1].0, self.bins[hi - 1].1, self.bins[hi].0, self.bins[hi].1)
        };
        let w = if hi_c > lo_c { (doy - lo_c) / (hi_c - lo_c) } else { 0.0 };
        std::array::from_fn(|b| (lo_v[b] + w * (hi_v[b] - lo_v[b])) as f32)
    }

    pub fn predict(&self, dates: &[Day]) -> Vec<[f32; N_BANDS]> {
        dates
            .iter()
            .map(|d| self.predict_day_of_year(d.day_of_year() as f64))
            .collect()
    }
}

/// Fits on `history` and predicts raw bands for `future`.
pub fn phase_fold_baseline(history: &ObservationSeries, future: &[Day]) -> Result<Vec<[f32; N_BANDS]>> {
    Ok(PhaseFoldBaseline::fit(history)?.predict(future))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: impl Fn(Day) -> f32, start: Day, days: i64, step: i64) -> ObservationSeries {
        let dates: Vec<Day> = (0..days / step).map(|i| start.plus(i * step)).collect();
        let refl = dates.iter().map(|&d| [values(d); N_BANDS]).collect();
        ObservationSeries::new(0, dates, refl).unwrap()
    }

    #[test]
    fn constant_history() {
        let s = series(|_| 1234.0, Day::from_ymd(2015, 1, 1).unwrap(), 800, 5);
        let b = PhaseFoldBaseline::fit(&s).unwrap();
        for doy in [0.0, 2.5, 180.0, 364.9] {
            assert_eq!(b.predict_day_of_year(doy), [1234.0; N_BANDS]);
        }
    }

    #[test]
    fn short_history_rejected() {
        let s = series(|_| 1.0, Day::from_ymd(2015, 1, 1).unwrap(), 300, 5);
        assert!(matches!(PhaseFoldBaseline::fit(&s), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn wraps_across_year_end() {
        let start = Day::from_ymd(2015, 1, 1).unwrap();
        let s = series(|d| if d.day_of_year() < 180 { 100.0 } else { 300.0 }, start, 730, 5);
        let b = PhaseFoldBaseline::fit(&s).unwrap();
        let last = b.bins().last().unwrap().0;
        let first = b.bins()[0].0;
        // Halfway between the last center and next year's first center.
        let mid = (last + first + YEAR) / 2.0;
        let v = b.predict_day_of_year(mid - YEAR)[0];
        assert!((v - 200.0).abs() < 1e-3, "{v}");
        assert_eq!(bin_of(365), 72);
        assert_eq!(bin_of(364), 72);
        assert_eq!(bin_of(4), 0);
    }
}
