use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::data::{ObservationSeries, N_BANDS};
use crate::dates::Day;
use crate::error::{Error, Result};
use crate::indices::{BandVector, Index};
use crate::io::write_atomic;

pub const REPORT_HEADER: &str = "method,index,lead_days,median_l1,p25,p75,count";
pub const TRAJECTORY_HEADER: &str =
    "pixel_id,date,band_0,band_1,band_2,band_3,band_4,band_5,band_6,band_7,band_8,band_9";

/// Quantity compared between forecast and truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexSpec {
    Index(Index),
    /// Raw reflectance of one band.
    Band(usize),
}

impl IndexSpec {
    pub fn value(self, b: &BandVector) -> f64 {
        match self {
            IndexSpec::Index(i) => i.compute(b, None),
            IndexSpec::Band(k) => b[k] as f64,
        }
    }

    fn valid_names() -> Vec<String> {
        Index::ALL
            .iter()
            .map(|i| i.name().to_string())
            .chain((0..N_BANDS).map(|k| format!("band_{k}")))
            .collect()
    }
}

impl fmt::Display for IndexSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexSpec::Index(i) => write!(f, "{i}"),
            IndexSpec::Band(k) => write!(f, "band_{k}"),
        }
    }
}

impl FromStr for IndexSpec {
    type Err = Error;

    /// Accepts an index name (any case), `band_k` or a bare band number.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(i) = s.parse::<Index>() {
            return Ok(IndexSpec::Index(i));
        }
        let t = s.trim().to_ascii_lowercase();
        let digits = t.strip_prefix("band_").unwrap_or(&t);
        match digits.parse::<usize>() {
            Ok(k) if k < N_BANDS => Ok(IndexSpec::Band(k)),
            _ => Err(Error::UnknownColumn {
                name: s.to_string(),
                valid: Self::valid_names(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub lead_days: i64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub count: usize,
}

/// Per-lead-time L1 statistics of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastReport {
    pub method: String,
    pub index: IndexSpec,
    pub buckets: Vec<Bucket>,
}

impl ForecastReport {
    /// Median L1 at a given lead, if that bucket exists.
    pub fn median_at(&self, lead_days: i64) -> Option<f64> {
        self.buckets.iter().find(|b| b.lead_days == lead_days).map(|b| b.median)
    }
}

/// Percentile `p ∈ [0, 1]` of `sorted` by linear interpolation between the
/// closest ranks: rank `p·(n−1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = rank - lo as f64;
            sorted[lo] + w * (sorted[hi] - sorted[lo])
        }
    }
}

/// Absolute index error of each prediction against the truth series with the
/// same pixel id, bucketed by days since `origin`.
pub fn evaluate_l1(
    method: &str,
    predictions: &[ObservationSeries],
    truth: &[ObservationSeries],
    origin: Day,
    index: IndexSpec,
) -> Result<ForecastReport> {
    if predictions.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} predicted pixels but {} truth pixels",
            predictions.len(),
            truth.len()
        )));
    }
    let by_id: BTreeMap<u64, &ObservationSeries> = truth.iter().map(|s| (s.pixel_id, s)).collect();
    if by_id.len() != truth.len() {
        return Err(Error::Alignment("duplicate pixel ids in truth".into()));
    }
    let mut errors: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for p in predictions {
        let t = by_id
            .get(&p.pixel_id)
            .ok_or_else(|| Error::Alignment(format!("pixel {} has no truth series", p.pixel_id)))?;
        if p.dates != t.dates || p.reflectances.len() != p.dates.len() || t.reflectances.len() != t.dates.len() {
            return Err(Error::Alignment(format!("dates of pixel {} differ from the truth", p.pixel_id)));
        }
        for ((d, a), b) in p.dates.iter().zip(&p.reflectances).zip(&t.reflectances) {
            let e = (index.value(a) - index.value(b)).abs();
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{index} error of pixel {}", p.pixel_id),
                    index: d.days_since(origin) as usize,
                });
            }
            errors.entry(d.days_since(origin)).or_default().push(e);
        }
    }
    let buckets = errors
        .into_iter()
        .map(|(lead_days, mut e)| {
            e.sort_by(f64::total_cmp);
            Bucket {
                lead_days,
                median: percentile(&e, 0.5),
                p25: percentile(&e, 0.25),
                p75: percentile(&e, 0.75),
                count: e.len(),
            }
        })
        .collect();
    Ok(ForecastReport {
        method: method.to_string(),
        index,
        buckets,
    })
}

pub fn format_reports(reports: &[ForecastReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        for b in &r.buckets {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method, r.index, b.lead_days, b.median, b.p25, b.p75, b.count
            );
        }
    }
    out
}

pub fn write_reports(reports: &[ForecastReport], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_reports(reports).as_bytes())
}

pub fn format_trajectories(series: &[ObservationSeries]) -> String {
    let mut out = format!("{TRAJECTORY_HEADER}\n");
    for s in series {
        for (d, r) in s.dates.iter().zip(&s.reflectances) {
            let _ = write!(out, "{},{d}", s.pixel_id);
            for v in r {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_trajectories(series: &[ObservationSeries], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_trajectories(series).as_bytes())
}

/// Parses trajectory CSV into one series per pixel, in order of first
/// appearance. Rows of a pixel must have increasing dates.
pub fn parse_trajectories(text: &str) -> Result<Vec<ObservationSeries>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: "expected trajectory header".into(),
            })
        }
    }
    let mut order: Vec<u64> = Vec::new();
    let mut series: BTreeMap<u64, ObservationSeries> = BTreeMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: n + 1, reason };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 2 + N_BANDS {
            return Err(err(format!("expected {} fields, found {}", 2 + N_BANDS, f.len())));
        }
        let id: u64 = f[0].parse().map_err(|e| err(format!("pixel_id: {e}")))?;
        let date: Day = f[1].parse().map_err(|_| err(format!("bad date {:?}", f[1])))?;
        let mut bands = [0.0f32; N_BANDS];
        for (k, b) in bands.iter_mut().enumerate() {
            *b = f[2 + k].parse().map_err(|e| err(format!("band_{k}: {e}")))?;
            if !b.is_finite() {
                return Err(err(format!("band_{k} is not finite")));
            }
        }
        let s = series.entry(id).or_insert_with(|| {
            order.push(id);
            ObservationSeries {
                pixel_id: id,
                dates: Vec::new(),
                reflectances: Vec::new(),
            }
        });
        if s.dates.last().is_some_and(|&last| date <= last) {
            return Err(err(format!("dates of pixel {id} are not increasing")));
        }
        s.dates.push(date);
        s.reflectances.push(bands);
    }
    Ok(order.into_iter().filter_map(|id| series.remove(&id)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(id: u64, nir: f32) -> ObservationSeries {
        let mut r = [1000.0; N_BANDS];
        r[7] = nir;
        ObservationSeries::new(id, vec![Day::from_ymd(2023, 1, 6).unwrap()], vec![r]).unwrap()
    }

    #[test]
    fn percentile_rule() {
        let v = [0.1, 0.2, 0.3];
        assert!((percentile(&v, 0.5) - 0.2).abs() < 1e-15);
        assert!((percentile(&v, 0.25) - 0.15).abs() < 1e-15);
        assert!((percentile(&v, 0.75) - 0.25).abs() < 1e-15);
        assert_eq!(percentile(&[4.0], 0.25), 4.0);
    }

    #[test]
    fn index_spec_names() {
        assert_eq!("NDVI".parse::<IndexSpec>().unwrap(), IndexSpec::Index(Index::Ndvi));
        assert_eq!("band_3".parse::<IndexSpec>().unwrap(), IndexSpec::Band(3));
        assert_eq!("7".parse::<IndexSpec>().unwrap(), IndexSpec::Band(7));
        assert!(matches!("band_10".parse::<IndexSpec>(), Err(Error::UnknownColumn { .. })));
        assert_eq!(IndexSpec::Band(2).to_string().parse::<IndexSpec>().unwrap(), IndexSpec::Band(2));
    }

    #[test]
    fn singleton_and_misalignment() {
        let origin = Day::from_ymd(2023, 1, 1).unwrap();
        let r = evaluate_l1("m", &[one(0, 3000.0)], &[one(0, 1000.0)], origin, IndexSpec::Band(7)).unwrap();
        assert_eq!(r.buckets, vec![Bucket { lead_days: 5, median: 2000.0, p25: 2000.0, p75: 2000.0, count: 1 }]);
        assert!(matches!(
            evaluate_l1("m", &[one(0, 1.0)], &[one(1, 1.0)], origin, IndexSpec::Band(7)),
            Err(Error::Alignment(_))
        ));
        let mut shifted = one(0, 1.0);
        shifted.dates[0] = shifted.dates[0].plus(1);
        assert!(matches!(
            evaluate_l1("m", &[shifted], &[one(0, 1.0)], origin, IndexSpec::Band(7)),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn trajectory_round_trip() {
        let s = vec![one(3, 1234.5), one(1, 0.0)];
        let back = parse_trajectories(&format_trajectories(&s)).unwrap();
        assert_eq!(back, s);
        assert!(parse_trajectories("nope\n").is_err());
        let dup = format!("{TRAJECTORY_HEADER}\n1,2023-01-01,0,0,0,0,0,0,0,0,0,0\n1,2023-01-01,0,0,0,0,0,0,0,0,0,0\n");
        assert!(matches!(parse_trajectories(&dup), Err(Error::Parse { line: 3, .. })));
    }
}
