//! The three calibration questions and their metrics: signed mean error for
//! population-mean recovery, MAE with Pearson/Spearman for per-item accuracy,
//! and symmetrized KL between Gaussian KDEs for distributional shape.

use serde::{Deserialize, Serialize};

use crate::data::{SCALE_MAX, SCALE_MIN};
use crate::error::{Error, Result};

/// Number of evaluation points for density estimates.
pub const GRID_POINTS: usize = 500;
/// Densities are floored here before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-12;

fn check_paired(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "need at least {min_len} paired items, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Neumaier-compensated sum.
pub(crate) fn sum(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    s + c
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// `mean(reference) - mean(corrected)`: positive when the corrector under-scores.
pub fn mean_error(corrected: &[f64], reference: &[f64]) -> Result<f64> {
    check_paired(corrected, reference, 1)?;
    Ok(mean(reference) - mean(corrected))
}

pub fn mae(corrected: &[f64], reference: &[f64]) -> Result<f64> {
    check_paired(corrected, reference, 1)?;
    let total: f64 = corrected
        .iter()
        .zip(reference)
        .map(|(c, r)| (c - r).abs())
        .sum();
    Ok(total / corrected.len() as f64)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired(a, b, 2)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(
            "zero variance input to correlation".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired(a, b, 2)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `1.06 * sd * n^(-1/5)`.
    Silverman,
    Fixed(f64),
}

pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    1.06 * sample_sd(samples) * (samples.len() as f64).powf(-0.2)
}

/// A Gaussian KDE tabulated on the fixed score grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

pub fn score_grid() -> Vec<f64> {
    let step = (SCALE_MAX - SCALE_MIN) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|i| SCALE_MIN + step * i as f64)
        .collect()
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

fn normalize(grid: &[f64], density: &mut [f64]) {
    let z = trapezoid(grid, density);
    density.iter_mut().for_each(|d| *d /= z);
}

/// Gaussian KDE on `[1, 5]`.
///
/// Kernel mass that falls outside the scale is dropped and the on-grid
/// density renormalized; the result is then floored at [`DENSITY_FLOOR`] and
/// renormalized again.
pub fn kde(samples: &[f64], bandwidth: Bandwidth) -> Result<DensityEstimate> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput("kde needs at least two samples".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("kde samples".into()));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => {
            let h = silverman_bandwidth(samples);
            if h == 0.0 {
                return Err(Error::Degenerate(
                    "zero-variance sample; use a fixed bandwidth".into(),
                ));
            }
            h
        }
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => {
            return Err(Error::InvalidInput(format!(
                "bandwidth {h} must be positive"
            )))
        }
    };
    // summation order fixed by value so equal multisets give identical densities
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let grid = score_grid();
    let inv_h = 1.0 / h;
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&g| {
            sorted
                .iter()
                .map(|&x| {
                    let u = (g - x) * inv_h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    if density.iter().all(|&d| d == 0.0) {
        // every sample is far outside the scale; fall back to the floor
        density.iter_mut().for_each(|d| *d = DENSITY_FLOOR);
    }
    normalize(&grid, &mut density);
    density.iter_mut().for_each(|d| *d = d.max(DENSITY_FLOOR));
    normalize(&grid, &mut density);
    Ok(DensityEstimate {
        grid,
        density,
        bandwidth: h,
    })
}

fn kl_directed(p: &DensityEstimate, q: &DensityEstimate) -> f64 {
    let integrand: Vec<f64> = p
        .density
        .iter()
        .zip(&q.density)
        .map(|(a, b)| a * (a / b).ln())
        .collect();
    trapezoid(&p.grid, &integrand)
}

/// `(KL(p||q) + KL(q||p)) / 2` by trapezoid quadrature on the shared grid.
pub fn kl_symmetrized(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::InvalidInput("density grids differ".into()));
    }
    let kl = 0.5 * (kl_directed(p, q) + kl_directed(q, p));
    // quadrature of the two directions can dip a hair below zero
    Ok(kl.max(0.0))
}

/// All metrics for one corrector on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_error: f64,
    pub mae: f64,
    /// Absent when the corrected scores are constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    pub kl_sym: f64,
    pub n_items: usize,
}

impl MetricsReport {
    pub fn check_finite(&self) -> Result<()> {
        let values = [
            ("mean_error", Some(self.mean_error)),
            ("mae", Some(self.mae)),
            ("pearson", self.pearson),
            ("spearman", self.spearman),
            ("kl_sym", Some(self.kl_sym)),
        ];
        for (name, v) in values {
            if matches!(v, Some(x) if !x.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}

/// Computes every metric on the same item pairing.
///
/// A constant corrected vector has no correlation and no Silverman bandwidth;
/// in that case the correlations are reported absent and its KDE borrows the
/// reference sample's bandwidth.
pub fn full_report(corrected: &[f64], reference: &[f64]) -> Result<MetricsReport> {
    check_paired(corrected, reference, 2)?;
    if corrected.iter().chain(reference).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("corrected or reference scores".into()));
    }
    let q = kde(reference, Bandwidth::Silverman)?;
    let constant = corrected.iter().all(|&c| c == corrected[0]);
    let (p, pearson_r, spearman_r) = if constant {
        (kde(corrected, Bandwidth::Fixed(q.bandwidth))?, None, None)
    } else {
        (
            kde(corrected, Bandwidth::Silverman)?,
            Some(pearson(corrected, reference)?),
            Some(spearman(corrected, reference)?),
        )
    };
    let report = MetricsReport {
        mean_error: mean_error(corrected, reference)?,
        mae: mae(corrected, reference)?,
        pearson: pearson_r,
        spearman: spearman_r,
        kl_sym: kl_symmetrized(&p, &q)?,
        n_items: corrected.len(),
    };
    report.check_finite()?;
    Ok(report)
}
