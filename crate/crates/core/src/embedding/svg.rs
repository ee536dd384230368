use std::fmt::Write as _;
use std::path::Path;

use super::{EmbeddingTable, SUMMARY_COLUMNS};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const RADIUS: f64 = 2.5;

/// Viridis control points, low to high.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let w = x - i as f64;
    std::array::from_fn(|c| (RAMP[i][c] + w * (RAMP[i + 1][c] - RAMP[i][c])).round() as u8)
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn scale(v: f64, (lo, hi): (f64, f64), out_lo: f64, out_hi: f64) -> f64 {
    if hi > lo {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    } else {
        (out_lo + out_hi) / 2.0
    }
}

/// Scatter of the first two PCA coordinates, one circle per pixel, coloured
/// by a summary column.
pub fn render_scatter(table: &EmbeddingTable, coloring: &str) -> Result<String> {
    if !SUMMARY_COLUMNS.contains(&coloring) {
        return Err(Error::UnknownColumn {
            name: coloring.to_string(),
            valid: SUMMARY_COLUMNS.iter().map(|s| s.to_string()).collect(),
        });
    }
    if !table.is_empty() && table.coordinates.len() != table.len() {
        return Err(Error::Domain("embedding table has no PCA coordinates".into()));
    }
    let n = table.len();
    let xs = extent((0..n).map(|i| table.coordinate(i, 0)));
    let ys = extent((0..n).map(|i| table.coordinate(i, 1)));
    let values: Vec<f64> = table.summaries.iter().map(|s| s.column(coloring).unwrap_or(0.0)).collect();
    let vs = extent(values.iter().copied());

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="14">PC1 vs PC2, coloured by {coloring}</text>"#,
        MARGIN / 2.0 + 5.0
    );
    for i in 0..n {
        let cx = scale(table.coordinate(i, 0), xs, MARGIN, WIDTH - MARGIN);
        let cy = scale(table.coordinate(i, 1), ys, HEIGHT - MARGIN, MARGIN);
        let [r, g, b] = if coloring == "rgb" {
            table.summaries[i].rgb
        } else {
            ramp(scale(values[i], vs, 0.0, 1.0))
        };
        let _ = writeln!(
            out,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{RADIUS}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>"
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_scatter(table: &EmbeddingTable, coloring: &str, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), render_scatter(table, coloring)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::PixelSummary;

    fn table(n: usize) -> EmbeddingTable {
        EmbeddingTable {
            pixel_ids: (0..n as u64).collect(),
            embeddings: vec![vec![0.0; 2]; n],
            coordinates: (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect(),
            summaries: (0..n)
                .map(|i| PixelSummary {
                    index_stats: [(i as f64 / 10.0, 0.1); 4],
                    ndvi_peak_doy: 100 + i as u32,
                    rgb: [i as u8, 2, 3],
                })
                .collect(),
        }
    }

    #[test]
    fn counts_and_determinism() {
        let t = table(10);
        let a = render_scatter(&t, "ndvi_mean").unwrap();
        assert_eq!(a.matches("<circle").count(), 10);
        assert_eq!(a, render_scatter(&t, "ndvi_mean").unwrap());
        assert!(render_scatter(&t, "rgb").unwrap().contains("#090203"));
        let empty = render_scatter(&table(0), "ndvi_peak_doy").unwrap();
        assert!(empty.starts_with("<?xml") && empty.ends_with("</svg>\n"));
        assert_eq!(empty.matches("<circle").count(), 0);
    }

    #[test]
    fn unknown_column_lists_valid_names() {
        match render_scatter(&table(1), "ndvi_median") {
            Err(Error::UnknownColumn { valid, .. }) => assert!(valid.contains(&"bsi_std".to_string())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [68, 1, 84]);
        assert_eq!(ramp(1.0), [253, 231, 37]);
        assert_eq!(ramp(f64::NAN), [68, 1, 84]);
    }
}
