//! Test-set metrics for probabilistic predictions.

use serde::{Deserialize, Serialize};

use crate::bins::BinGrid;
use crate::error::{Error, Result};
use crate::predict::Prediction;
use crate::special::{norm_cdf, norm_pdf, norm_quantile, LN_2PI};

/// Central interval levels reported as coverage.
pub const COVERAGE_LEVELS: [f64; 4] = [0.5, 0.8, 0.9, 0.95];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub c50: f64,
    pub c80: f64,
    pub c90: f64,
    pub c95: f64,
}

impl Coverage {
    fn from_array(a: [f64; 4]) -> Self {
        Self { c50: a[0], c80: a[1], c90: a[2], c95: a[3] }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.c50, self.c80, self.c90, self.c95]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub gaussian_nll: f64,
    pub crps: f64,
    pub coverage: Coverage,
    /// Absent when any prediction lacks a latent head.
    pub mean_epistemic_var: Option<f64>,
    pub mean_aleatoric_var: Option<f64>,
    pub mean_total_var: f64,
}

/// Closed-form CRPS of `N(mu, var)` at `y`.
pub fn crps_gaussian(mu: f64, var: f64, y: f64) -> f64 {
    let s = var.sqrt();
    let z = (y - mu) / s;
    s * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// `∫ (F(x) - h)² dx` over a bin of width `w` where `F` runs linearly from `f0` to `f1`.
fn linear_sq_integral(w: f64, f0: f64, f1: f64, h: f64) -> f64 {
    let (a, b) = (f0 - h, f1 - h);
    w * (a * a + a * b + b * b) / 3.0
}

/// Exact CRPS of the piecewise-uniform density defined by `probs` on `grid`.
/// Outside the grid the CDF is 0 below and 1 above.
pub fn crps_binned(grid: &BinGrid, probs: &[f64], y: f64) -> f64 {
    let e = grid.edges();
    let (lo, hi) = (e[0], e[e.len() - 1]);
    let mut total = 0.0;
    if y < lo {
        total += lo - y;
    } else if y > hi {
        total += y - hi;
    }
    let mut f0 = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        let (a, b) = (e[k], e[k + 1]);
        let f1 = f0 + p;
        if y <= a {
            total += linear_sq_integral(b - a, f0, f1, 1.0);
        } else if y >= b {
            total += linear_sq_integral(b - a, f0, f1, 0.0);
        } else {
            let fy = f0 + p * (y - a) / (b - a);
            total += linear_sq_integral(y - a, f0, fy, 0.0) + linear_sq_integral(b - y, fy, f1, 1.0);
        }
        f0 = f1;
    }
    total
}

/// Quantile of the piecewise-linear CDF of a binned density.
pub fn binned_quantile(grid: &BinGrid, probs: &[f64], q: f64) -> f64 {
    let e = grid.edges();
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 && cum + p >= q {
            let t = ((q - cum) / p).clamp(0.0, 1.0);
            return e[k] + t * (e[k + 1] - e[k]);
        }
        cum += p;
    }
    e[e.len() - 1]
}

/// Per-prediction quantities shared by every metric.
struct Summary {
    mean: f64,
    total_var: f64,
    epistemic_var: Option<f64>,
    aleatoric_var: Option<f64>,
    crps: f64,
    covered: [bool; 4],
}

fn summarize(pred: &Prediction, y: f64, grid: Option<&BinGrid>) -> Result<Summary> {
    match pred {
        Prediction::Gaussian(m) => {
            let s = m.v_tot.sqrt();
            let mut covered = [false; 4];
            for (c, level) in covered.iter_mut().zip(COVERAGE_LEVELS) {
                let z = norm_quantile(0.5 + 0.5 * level);
                *c = (y - m.mu_f).abs() <= z * s;
            }
            Ok(Summary {
                mean: m.mu_f,
                total_var: m.v_tot,
                epistemic_var: Some(m.v_epi),
                aleatoric_var: Some(m.noise_var),
                crps: crps_gaussian(m.mu_f, m.v_tot, y),
                covered,
            })
        }
        Prediction::Binned(p) => {
            let grid = grid.ok_or_else(|| Error::contract("binned predictions need their grid for metrics"))?;
            if grid.len() != p.obs().len() {
                return Err(Error::domain("prediction and grid disagree on K"));
            }
            let probs = p.obs().probs();
            let mut covered = [false; 4];
            for (c, level) in covered.iter_mut().zip(COVERAGE_LEVELS) {
                let lo = binned_quantile(grid, probs, 0.5 - 0.5 * level);
                let hi = binned_quantile(grid, probs, 0.5 + 0.5 * level);
                *c = lo <= y && y <= hi;
            }
            let obs = p.obs_moments();
            Ok(Summary {
                mean: obs.mean,
                total_var: obs.variance,
                epistemic_var: p.latent_moments().map(|m| m.variance),
                aleatoric_var: p.noise_var(),
                crps: crps_binned(grid, probs, y),
                covered,
            })
        }
    }
}

/// Point, likelihood, and calibration metrics of `preds` against observed `y`.
pub fn compute_metrics(preds: &[Prediction], y: &[f64], grid: Option<&BinGrid>) -> Result<MetricsBundle> {
    if preds.is_empty() {
        return Err(Error::domain("metrics need a non-empty test set"));
    }
    if preds.len() != y.len() {
        return Err(Error::domain(format!("{} predictions for {} targets", preds.len(), y.len())));
    }
    let rows = preds.iter().zip(y).map(|(p, &t)| summarize(p, t, grid)).collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean_of = |f: &dyn Fn(&Summary, f64) -> f64| rows.iter().zip(y).map(|(s, &t)| f(s, t)).sum::<f64>() / n;
    let optional_mean = |f: fn(&Summary) -> Option<f64>| -> Option<f64> {
        rows.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    let mut cov = [0.0; 4];
    for s in &rows {
        for (c, hit) in cov.iter_mut().zip(s.covered) {
            *c += f64::from(u8::from(hit));
        }
    }
    cov.iter_mut().for_each(|c| *c /= n);
    Ok(MetricsBundle {
        n: rows.len(),
        rmse: mean_of(&|s, t| (s.mean - t).powi(2)).sqrt(),
        mae: mean_of(&|s, t| (s.mean - t).abs()),
        gaussian_nll: mean_of(&|s, t| 0.5 * (LN_2PI + s.total_var.ln()) + (t - s.mean).powi(2) / (2.0 * s.total_var)),
        crps: mean_of(&|s, _| s.crps),
        coverage: Coverage::from_array(cov),
        mean_epistemic_var: optional_mean(|s| s.epistemic_var),
        mean_aleatoric_var: optional_mean(|s| s.aleatoric_var),
        mean_total_var: mean_of(&|s, _| s.total_var),
    })
}
