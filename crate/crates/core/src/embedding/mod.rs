//! Per-pixel embeddings, PCA projection, index summaries and scatter plots.

mod pca;
mod svg;

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

pub use pca::{fit_pca, project, PcaModel, PCA_MAX_SWEEPS, PCA_TOLERANCE};
pub use svg::{emit_scatter, render_scatter};

use crate::data::{band, denormalize_reflectance, ObservationSeries, TokenSource, N_CHANNELS};
use crate::dates::Day;
use crate::error::{Error, Result};
use crate::indices::Index;
use crate::io::write_atomic;
use crate::model::ModelParams;
use crate::numerics::Tensor;

pub const MID_SUMMER_DOY: u32 = 196;
/// Raw reflectance drawn at full brightness in the RGB summary.
pub const RGB_FULL_SCALE: f64 = 3000.0;

pub const EMBEDDING_HEADER: &str =
    "pixel_id,pc1,pc2,ndvi_mean,ndvi_std,ndvi_peak_doy,ndwi_mean,ndwi_std,bsi_mean,bsi_std,gcvi_mean,gcvi_std,r,g,b";

/// Summary columns usable as a scatter coloring; `rgb` uses the triple.
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "ndvi_mean", "ndvi_std", "ndvi_peak_doy", "ndwi_mean", "ndwi_std", "bsi_mean", "bsi_std", "gcvi_mean",
    "gcvi_std", "rgb",
];

/// Half-open date range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DateWindow {
    pub start: Day,
    pub end: Day,
}

impl DateWindow {
    pub fn new(start: Day, end: Day) -> Result<Self> {
        if end <= start {
            return Err(Error::Domain(format!("window end {end} is not after start {start}")));
        }
        Ok(Self { start, end })
    }

    /// The calendar year `year`.
    pub fn year(year: i32) -> Result<Self> {
        Self::new(Day::year_start(year)?, Day::year_start(year + 1)?)
    }

    pub fn contains(&self, d: Day) -> bool {
        d >= self.start && d < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryConfig {
    pub mid_summer_doy: u32,
    pub rgb_full_scale: f64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            mid_summer_doy: MID_SUMMER_DOY,
            rgb_full_scale: RGB_FULL_SCALE,
        }
    }
}

/// Per-pixel statistics over a date window. Standard deviations are
/// population values.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelSummary {
    /// `(mean, std)` in [`Index::ALL`] order.
    pub index_stats: [(f64, f64); 4],
    pub ndvi_peak_doy: u32,
    pub rgb: [u8; 3],
}

impl PixelSummary {
    pub fn mean(&self, index: Index) -> f64 {
        self.index_stats[index as usize].0
    }

    pub fn std(&self, index: Index) -> f64 {
        self.index_stats[index as usize].1
    }

    /// Numeric value of a summary column other than `rgb`.
    pub fn column(&self, name: &str) -> Option<f64> {
        if name == "ndvi_peak_doy" {
            return Some(self.ndvi_peak_doy as f64);
        }
        let (index, stat) = name.rsplit_once('_')?;
        let i: Index = index.parse().ok()?;
        match stat {
            "mean" => Some(self.mean(i)),
            "std" => Some(self.std(i)),
            _ => None,
        }
    }
}

fn rgb_channel(v: f32, full_scale: f64) -> u8 {
    (v as f64 / full_scale * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Index means and deviations, NDVI peak day and mid-summer colour of the
/// observations inside `window`.
pub fn index_summaries(series: &ObservationSeries, window: DateWindow, cfg: &SummaryConfig) -> Result<PixelSummary> {
    let inside: Vec<usize> = (0..series.len()).filter(|&i| window.contains(series.dates[i])).collect();
    if inside.len() < 3 {
        return Err(Error::InsufficientHistory {
            needed: "3 observations in the summary window".into(),
            got: inside.len().to_string(),
        });
    }
    let n = inside.len() as f64;
    let mut index_stats = [(0.0, 0.0); 4];
    let mut ndvi = Vec::with_capacity(inside.len());
    for (slot, index) in index_stats.iter_mut().zip(Index::ALL) {
        let values: Vec<f64> = inside.iter().map(|&i| index.compute(&series.reflectances[i], None)).collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        *slot = (mean, var.sqrt());
        if index == Index::Ndvi {
            ndvi = values;
        }
    }
    // Earliest maximum.
    let peak = (0..ndvi.len()).fold(0, |best, i| if ndvi[i] > ndvi[best] { i } else { best });
    let doy_distance = |i: usize| (series.dates[i].day_of_year() as i64 - cfg.mid_summer_doy as i64).abs();
    let summer = inside
        .iter()
        .copied()
        .fold(inside[0], |best, i| if doy_distance(i) < doy_distance(best) { i } else { best });
    let r = &series.reflectances[summer];
    Ok(PixelSummary {
        index_stats,
        ndvi_peak_doy: series.dates[inside[peak]].day_of_year(),
        rgb: [band::RED, band::GREEN, band::BLUE].map(|b| rgb_channel(r[b], cfg.rgb_full_scale)),
    })
}

/// Embeddings, summaries and (once projected) PCA coordinates of pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub pixel_ids: Vec<u64>,
    /// `[n_pixels][n_embd]`
    pub embeddings: Vec<Vec<f32>>,
    /// `[n_pixels][k]`; empty until [`EmbeddingTable::set_coordinates`].
    pub coordinates: Vec<Vec<f64>>,
    pub summaries: Vec<PixelSummary>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.pixel_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_ids.is_empty()
    }

    pub fn set_coordinates(&mut self, coordinates: Vec<Vec<f64>>) -> Result<()> {
        if coordinates.len() != self.len() {
            return Err(Error::shape("coordinates", &[coordinates.len()], &[self.len()]));
        }
        self.coordinates = coordinates;
        Ok(())
    }

    /// Fits a `k`-component PCA on the embeddings and stores the projection.
    pub fn fit_and_project(&mut self, k: usize) -> Result<PcaModel> {
        let pca = fit_pca(&self.embeddings, k)?;
        let coords = project(&pca, &self.embeddings)?;
        self.set_coordinates(coords)?;
        Ok(pca)
    }

    /// Coordinate `axis` of row `i`; axes beyond the fitted rank read as 0.
    pub fn coordinate(&self, i: usize, axis: usize) -> f64 {
        self.coordinates.get(i).and_then(|c| c.get(axis)).copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EMBEDDING_HEADER}\n");
        for i in 0..self.len() {
            let s = &self.summaries[i];
            let _ = write!(out, "{},{},{}", self.pixel_ids[i], self.coordinate(i, 0), self.coordinate(i, 1));
            for (j, (m, sd)) in s.index_stats.iter().enumerate() {
                let _ = write!(out, ",{m},{sd}");
                if j == 0 {
                    let _ = write!(out, ",{}", s.ndvi_peak_doy);
                }
            }
            let _ = writeln!(out, ",{},{},{}", s.rgb[0], s.rgb[1], s.rgb[2]);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// Raw series of `pixel` restricted to `window`, read from token storage.
pub fn window_series(src: &dyn TokenSource, pixel: usize, window: DateWindow) -> ObservationSeries {
    let mut tok = [0.0f32; N_CHANNELS];
    let times: Vec<usize> = (0..src.n_time()).filter(|&t| window.contains(src.date(t))).collect();
    ObservationSeries {
        pixel_id: pixel as u64,
        dates: times.iter().map(|&t| src.date(t)).collect(),
        reflectances: times
            .iter()
            .map(|&t| {
                src.read_token(pixel, t, &mut tok);
                std::array::from_fn(|b| denormalize_reflectance(tok[b]))
            })
            .collect(),
    }
}

/// Mean penultimate output over all of a pixel's tokens inside `window`.
/// Windows longer than the block size are cut into consecutive chunks of at
/// most `block_size` tokens and the outputs of all chunks are averaged.
pub fn pixel_embedding(params: &ModelParams, src: &dyn TokenSource, pixel: usize, times: &[usize]) -> Result<Vec<f32>> {
    if times.is_empty() {
        return Err(Error::EmptySequence);
    }
    let block = params.config().block_size;
    let d = params.config().n_embd;
    let mut acc = vec![0.0f64; d];
    let mut tok = [0.0f32; N_CHANNELS];
    for chunk in times.chunks(block) {
        let mut data = Vec::with_capacity(chunk.len() * N_CHANNELS);
        for &t in chunk {
            src.read_token(pixel, t, &mut tok);
            data.extend_from_slice(&tok);
        }
        let hidden = params.hidden_batch(&Tensor::new(&[chunk.len(), N_CHANNELS], data)?, chunk.len())?;
        for row in hidden.data().chunks(d) {
            acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
        }
    }
    Ok(acc.into_iter().map(|a| (a / times.len() as f64) as f32).collect())
}

/// Embeddings and summaries of `pixels` over `window`, in pixel order.
pub fn embed_pixels(
    params: &ModelParams,
    src: &dyn TokenSource,
    pixels: Range<usize>,
    window: DateWindow,
    cfg: &SummaryConfig,
) -> Result<EmbeddingTable> {
    if pixels.end > src.n_index() {
        return Err(Error::Domain(format!("pixel range {pixels:?} exceeds {} pixels", src.n_index())));
    }
    let n_time = src.n_time();
    if n_time == 0 || window.start < src.date(0) || window.start > src.date(n_time - 1) {
        return Err(Error::Domain(format!(
            "window starting {} lies outside the dataset span",
            window.start
        )));
    }
    let times: Vec<usize> = (0..n_time).filter(|&t| window.contains(src.date(t))).collect();
    if times.is_empty() {
        return Err(Error::InsufficientHistory {
            needed: "observations inside the window".into(),
            got: "0".into(),
        });
    }
    let rows: Vec<(Vec<f32>, PixelSummary)> = pixels
        .clone()
        .into_par_iter()
        .map(|p| {
            let e = pixel_embedding(params, src, p, &times)?;
            let s = index_summaries(&window_series(src, p, window), window, cfg)?;
            Ok((e, s))
        })
        .collect::<Result<_>>()?;
    let (embeddings, summaries) = rows.into_iter().unzip();
    Ok(EmbeddingTable {
        pixel_ids: pixels.map(|p| p as u64).collect(),
        embeddings,
        coordinates: Vec::new(),
        summaries,
    })
}

/// Cosine similarity of two vectors; 0 when either is zero.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Mean pairwise cosine similarity within and across label groups.
pub fn label_similarity<L: PartialEq>(rows: &[Vec<f32>], labels: &[L]) -> (f64, f64) {
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let s = cosine_similarity(&rows[i], &rows[j]);
            if labels[i] == labels[j] {
                within += s;
                nw += 1;
            } else {
                across += s;
                na += 1;
            }
        }
    }
    (within / nw.max(1) as f64, across / na.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::N_BANDS;

    fn constant_series(v: f32, n: usize) -> ObservationSeries {
        let start = Day::from_ymd(2022, 1, 1).unwrap();
        ObservationSeries::new(
            0,
            (0..n as i64).map(|i| start.plus(5 * i)).collect(),
            vec![[v; N_BANDS]; n],
        )
        .unwrap()
    }

    #[test]
    fn constant_summary() {
        let mut s = constant_series(1000.0, 73);
        for r in &mut s.reflectances {
            r[band::NIR] = 3000.0;
        }
        let w = DateWindow::year(2022).unwrap();
        let sum = index_summaries(&s, w, &SummaryConfig::default()).unwrap();
        assert_eq!(sum.std(Index::Ndvi), 0.0);
        assert!((sum.mean(Index::Ndvi) - 0.5).abs() < 1e-12);
        assert_eq!(sum.ndvi_peak_doy, 0);
        assert_eq!(sum.rgb, [85, 85, 85]);
        assert_eq!(sum.column("gcvi_mean"), Some(2.0));
        assert_eq!(sum.column("rgb"), None);
    }

    #[test]
    fn too_few_observations() {
        let s = constant_series(1.0, 2);
        assert!(index_summaries(&s, DateWindow::year(2022).unwrap(), &SummaryConfig::default()).is_err());
        assert!(DateWindow::new(s.dates[1], s.dates[0]).is_err());
    }

    #[test]
    fn rgb_scaling_clamps() {
        assert_eq!(rgb_channel(0.0, 3000.0), 0);
        assert_eq!(rgb_channel(3000.0, 3000.0), 255);
        assert_eq!(rgb_channel(9000.0, 3000.0), 255);
        assert_eq!(rgb_channel(1500.0, 3000.0), 128);
    }

    #[test]
    fn cosine() {
        assert!((cosine_similarity(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        let (w, a) = label_similarity(&[vec![1.0, 0.0], vec![1.0, 0.1], vec![0.0, 1.0]], &[0, 0, 1]);
        assert!(w > a);
    }
}
