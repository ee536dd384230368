use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_SWEEPS: usize = 1000;
/// Variances below this fraction of the total count as zero.
const RANK_FLOOR: f64 = 1e-10;

/// Mean, principal axes and their variances.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `[k][width]`, orthonormal rows.
    pub axes: Vec<Vec<f64>>,
    /// Descending.
    pub variances: Vec<f64>,
    /// Total variance of the centered data.
    pub total_variance: f64,
    /// Fewer than the requested components had non-zero variance.
    pub rank_deficient: bool,
    pub sweeps: usize,
}

impl PcaModel {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.axes.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram–Schmidt, applied twice. Returns the norm of each column
/// before its final normalization.
fn orthonormalize(q: &mut [Vec<f64>]) -> Vec<f64> {
    let mut norms = vec![0.0; q.len()];
    for _ in 0..2 {
        for i in 0..q.len() {
            let (done, rest) = q.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let p = dot(u, v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            let n = dot(v, v).sqrt();
            norms[i] = n;
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
    }
    norms
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and eigenvectors as columns of `v`.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn covariance_times(cov: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    cov.iter().map(|row| dot(row, v)).collect()
}

/// Top-`k` principal components of `rows` by orthogonal iteration on the
/// covariance with a Rayleigh–Ritz rotation each sweep.
pub fn fit_pca(rows: &[Vec<f32>], k: usize) -> Result<PcaModel> {
    let n = rows.len();
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    if k == 0 || n <= k {
        return Err(Error::Domain(format!("PCA needs n_pixels > k >= 1, got {n} rows and k = {k}")));
    }
    if width == 0 {
        return Err(Error::Domain("PCA rows are empty".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::shape("fit_pca", &[r.len()], &[width]));
    }
    let k = k.min(width);
    let mut mean = vec![0.0f64; width];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0f64; width]; width];
    let mut centered = vec![0.0f64; width];
    for r in rows {
        centered.iter_mut().zip(r).zip(&mean).for_each(|((c, &v), m)| *c = v as f64 - m);
        for (i, row) in cov.iter_mut().enumerate() {
            let ci = centered[i];
            for j in i..width {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..width {
        for j in i..width {
            let v = cov[i][j] / n as f64;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    if let Some(i) = (0..width).find(|&i| !cov[i][i].is_finite()) {
        return Err(Error::NonFinite { what: "PCA input column".into(), index: i });
    }
    let total: f64 = (0..width).map(|i| cov[i][i]).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut q: Vec<Vec<f64>> = (0..k).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&mut q);
    let mut values = vec![0.0; k];
    let mut sweeps = 0;
    while sweeps < PCA_MAX_SWEEPS {
        sweeps += 1;
        let mut z: Vec<Vec<f64>> = q.iter().map(|v| covariance_times(&cov, v)).collect();
        orthonormalize(&mut z);
        // Ritz rotation inside the current subspace.
        let cz: Vec<Vec<f64>> = z.iter().map(|v| covariance_times(&cov, v)).collect();
        let h: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&z[i], &cz[j])).collect()).collect();
        let (vals, vecs) = jacobi_eigen(h);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let next: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; width];
                for (i, zi) in z.iter().enumerate() {
                    v.iter_mut().zip(zi).for_each(|(x, y)| *x += vecs[i][c] * y);
                }
                v
            })
            .collect();
        let next_values: Vec<f64> = order.iter().map(|&c| vals[c]).collect();
        let change = next
            .iter()
            .zip(&q)
            .map(|(a, b)| 1.0 - dot(a, b).abs())
            .fold(0.0f64, f64::max);
        let value_change = next_values
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        q = next;
        values = next_values;
        if change < PCA_TOLERANCE * PCA_TOLERANCE && value_change <= PCA_TOLERANCE * total.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    for v in q.iter_mut() {
        let big = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let floor = RANK_FLOOR * total;
    let keep = values.iter().take_while(|&&v| v > floor).count();
    let rank_deficient = keep < k;
    q.truncate(keep);
    values.truncate(keep);
    Ok(PcaModel {
        mean,
        axes: q,
        variances: values.into_iter().map(|v| v.max(0.0)).collect(),
        total_variance: total,
        rank_deficient,
        sweeps,
    })
}

/// Coordinates `(x − mean)·axesᵀ`, one row per input row.
pub fn project(pca: &PcaModel, rows: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| {
            if r.len() != pca.width() {
                return Err(Error::shape("project", &[r.len()], &[pca.width()]));
            }
            let c: Vec<f64> = r.iter().zip(&pca.mean).map(|(&v, m)| v as f64 - m).collect();
            Ok(pca.axes.iter().map(|a| dot(a, &c)).collect())
        })
        .collect()
}
