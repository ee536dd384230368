//! Spectral indices over raw-scale band vectors.
//!
//! | index | formula |
//! |-------|---------|
//! | NDVI  | (NIR − Red) / (NIR + Red) |
//! | NDWI  | (Green − NIR) / (Green + NIR) |
//! | BSI   | ((SWIR1 + Red) − (NIR + Blue)) / ((SWIR1 + Red) + (NIR + Blue)) |
//! | GCVI  | NIR / Green − 1 |
//!
//! A zero denominator yields 0 and increments the index's counter in
//! [`FlagCounter`] when one is supplied.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::{band, N_BANDS};
use crate::error::{Error, Result};

pub type BandVector = [f32; N_BANDS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Index {
    Ndvi,
    Ndwi,
    Bsi,
    Gcvi,
}

impl Index {
    pub const ALL: [Index; 4] = [Index::Ndvi, Index::Ndwi, Index::Bsi, Index::Gcvi];

    pub fn name(self) -> &'static str {
        match self {
            Index::Ndvi => "ndvi",
            Index::Ndwi => "ndwi",
            Index::Bsi => "bsi",
            Index::Gcvi => "gcvi",
        }
    }

    /// Value and whether the denominator was zero.
    pub fn evaluate(self, b: &BandVector) -> (f64, bool) {
        let g = |i: usize| b[i] as f64;
        let (num, den) = match self {
            Index::Ndvi => (g(band::NIR) - g(band::RED), g(band::NIR) + g(band::RED)),
            Index::Ndwi => (g(band::GREEN) - g(band::NIR), g(band::GREEN) + g(band::NIR)),
            Index::Bsi => {
                let a = g(band::SWIR1) + g(band::RED);
                let c = g(band::NIR) + g(band::BLUE);
                (a - c, a + c)
            }
            Index::Gcvi => {
                let green = g(band::GREEN);
                return if green == 0.0 {
                    (0.0, true)
                } else {
                    (g(band::NIR) / green - 1.0, false)
                };
            }
        };
        if den == 0.0 {
            (0.0, true)
        } else {
            (num / den, false)
        }
    }

    /// Evaluates and records a zero denominator in `flags`.
    pub fn compute(self, b: &BandVector, flags: Option<&FlagCounter>) -> f64 {
        let (v, flagged) = self.evaluate(b);
        if flagged {
            if let Some(f) = flags {
                f.record(self);
            }
        }
        v
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Index {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Index::ALL
            .into_iter()
            .find(|i| i.name() == lower)
            .ok_or_else(|| Error::UnknownColumn {
                name: s.to_string(),
                valid: Index::ALL.iter().map(|i| i.name().to_string()).collect(),
            })
    }
}

pub fn ndvi(b: &BandVector) -> f64 {
    Index::Ndvi.evaluate(b).0
}

pub fn ndwi(b: &BandVector) -> f64 {
    Index::Ndwi.evaluate(b).0
}

pub fn bsi(b: &BandVector) -> f64 {
    Index::Bsi.evaluate(b).0
}

pub fn gcvi(b: &BandVector) -> f64 {
    Index::Gcvi.evaluate(b).0
}

/// Zero-denominator counts per index, shareable across threads.
#[derive(Debug, Default)]
pub struct FlagCounter {
    counts: [AtomicU64; 4],
}

impl FlagCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(index: Index) -> usize {
        Index::ALL.iter().position(|&i| i == index).expect("listed")
    }

    pub fn record(&self, index: Index) {
        self.counts[Self::slot(index)].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, index: Index) -> u64 {
        self.counts[Self::slot(index)].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Index::ALL.iter().map(|&i| self.get(i)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bands(pairs: &[(usize, f32)]) -> BandVector {
        let mut b = [1000.0; N_BANDS];
        for &(i, v) in pairs {
            b[i] = v;
        }
        b
    }

    #[test]
    fn ndvi_examples() {
        assert_eq!(ndvi(&bands(&[(band::NIR, 1234.0), (band::RED, 1234.0)])), 0.0);
        let v = ndvi(&bands(&[(band::NIR, 8000.0), (band::RED, 1000.0)]));
        assert!((v - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(ndvi(&bands(&[(band::NIR, 0.0), (band::RED, 1000.0)])), -1.0);
    }

    #[test]
    fn other_examples() {
        assert_eq!(ndwi(&bands(&[(band::GREEN, 700.0), (band::NIR, 700.0)])), 0.0);
        let b = bands(&[
            (band::SWIR1, 3000.0),
            (band::RED, 2000.0),
            (band::NIR, 2500.0),
            (band::BLUE, 500.0),
            (band::SWIR2, 9999.0),
        ]);
        assert!((bsi(&b) - 0.25).abs() < 1e-12);
        assert_eq!(gcvi(&bands(&[(band::GREEN, 640.0), (band::NIR, 640.0)])), 0.0);
    }

    #[test]
    fn zero_denominators_flagged() {
        let flags = FlagCounter::new();
        let z = [0.0; N_BANDS];
        for i in Index::ALL {
            assert_eq!(i.compute(&z, Some(&flags)), 0.0);
        }
        assert_eq!(flags.total(), 4);
        assert_eq!(flags.get(Index::Gcvi), 1);
        Index::Ndvi.compute(&bands(&[]), Some(&flags));
        assert_eq!(flags.total(), 4);
    }

    #[test]
    fn parse_names() {
        assert_eq!("NDVI".parse::<Index>().unwrap(), Index::Ndvi);
        assert!(matches!("evi".parse::<Index>(), Err(Error::UnknownColumn { .. })));
    }
}
