//! Binned distributions over a fixed target grid.
//!
//! A [`BinGrid`] discretizes the (normalized) target axis into `K` bins. The
//! latent head of a decoupled model is a [`BinPmf`] over noiseless signal
//! values; the observation predictive is obtained by pushing that PMF through
//! a Gaussian noise kernel ([`TransitionMatrix`], [`convolve`]).
//!
//! Bin indices are 0-based throughout (`0..K`).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_sf, normal_mass};

/// Floor applied to each transition-matrix entry before row renormalization.
/// Also caps the bar loss at `-ln(TRANSITION_FLOOR)` for zero-mass bins.
pub const TRANSITION_FLOOR: f64 = 1e-12;

/// Floor on every variance reported from a PMF or a noise head.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const PMF_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct BinGrid {
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
    /// Common width when every bin has the same width.
    uniform_width: Option<f64>,
}

impl BinGrid {
    /// Uniform grid of `k` bins spanning `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::domain(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        if k < 2 {
            return Err(Error::domain(format!("grid needs at least 2 bins, got {k}")));
        }
        let width = (hi - lo) / k as f64;
        let mut edges: Vec<f64> = (0..=k).map(|i| lo + width * i as f64).collect();
        edges[k] = hi;
        let mut grid = Self::from_edges(edges)?;
        grid.uniform_width = Some(width);
        Ok(grid)
    }

    /// Grid from explicit, strictly increasing edges.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::domain("a grid needs at least 3 edges (2 bins)"));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::domain("grid edges must be finite"));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("grid edges must be strictly increasing"));
        }
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        let w0 = widths[0];
        let uniform_width = widths
            .iter()
            .all(|w| ((w - w0) / w0).abs() < 1e-9)
            .then(|| (edges[edges.len() - 1] - edges[0]) / widths.len() as f64);
        Ok(Self { edges, centers, widths, uniform_width })
    }

    /// Number of bins `K`.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }

    pub fn uniform_width(&self) -> Option<f64> {
        self.uniform_width
    }

    /// Bin containing `y`: intervals are right-open except the last, which is
    /// closed. Values outside the grid clamp to the boundary bins.
    pub fn bin_index(&self, y: f64) -> Result<usize> {
        if y.is_nan() {
            return Err(Error::domain("cannot bin NaN"));
        }
        let k = self.len();
        if y <= self.lo() {
            return Ok(0);
        }
        if y >= self.hi() {
            return Ok(k - 1);
        }
        // First edge strictly greater than y, minus one.
        let idx = self.edges.partition_point(|&e| e <= y);
        Ok((idx - 1).min(k - 1))
    }
}

impl Serialize for BinGrid {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            edges: &'a [f64],
        }
        Repr { edges: &self.edges }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinGrid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            edges: Vec<f64>,
        }
        let repr = Repr::deserialize(deserializer)?;
        BinGrid::from_edges(repr.edges).map_err(serde::de::Error::custom)
    }
}

/// Probability mass function over the bins of a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinPmf {
    probs: Vec<f64>,
}

impl BinPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty PMF"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("PMF entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::domain(format!("PMF sums to {total}, expected 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a PMF.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain("weights must have a positive finite sum"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Softmax of a logit vector.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::new(softmax(logits))
    }

    pub fn one_hot(k: usize, j: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[j] = 1.0;
        Self { probs }
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![1.0 / k as f64; k] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    pub fn total_variation(&self, other: &BinPmf) -> f64 {
        total_variation(&self.probs, &other.probs)
    }
}

impl<'de> Deserialize<'de> for BinPmf {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            probs: Vec<f64>,
        }
        let repr = Repr::deserialize(deserializer)?;
        BinPmf::new(repr.probs).map_err(serde::de::Error::custom)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMoments {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::domain(format!("invalid Gaussian moments ({mean}, {variance})")));
        }
        Ok(Self { mean, variance })
    }
}

/// Weights of the three training losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_y: f64,
    pub lambda_f: f64,
    pub lambda_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_y: 1.0, lambda_f: 1.0, lambda_sigma: 0.1 }
    }
}

impl LossWeights {
    pub fn new(lambda_y: f64, lambda_f: f64, lambda_sigma: f64) -> Result<Self> {
        let w = Self { lambda_y, lambda_f, lambda_sigma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_y, self.lambda_f, self.lambda_sigma];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::domain(format!("loss weights must be nonnegative, got {all:?}")));
        }
        Ok(())
    }
}

/// Gaussian noise kernel between latent bins (rows) and observation bins
/// (columns) for one noise variance.
///
/// Row `j` holds the probability that `c_j + ε`, `ε ~ N(0, σ²)`, lands in
/// each observation bin, truncated to the grid range: every entry is floored
/// at [`TRANSITION_FLOOR`] and the row renormalized to sum to one.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    k: usize,
    sigma: f64,
    rows: Vec<f64>,
    /// `∂T/∂σ`, present when built with [`TransitionMatrix::with_sigma_derivative`].
    d_sigma: Option<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(grid: &BinGrid, noise_var: f64) -> Result<Self> {
        Self::build(grid, noise_var, false)
    }

    pub fn with_sigma_derivative(grid: &BinGrid, noise_var: f64) -> Result<Self> {
        Self::build(grid, noise_var, true)
    }

    fn build(grid: &BinGrid, noise_var: f64, derivative: bool) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::domain(format!("noise variance must be positive, got {noise_var}")));
        }
        let k = grid.len();
        let sigma = noise_var.sqrt();
        let mut rows = vec![0.0; k * k];
        let mut d_rows = derivative.then(|| vec![0.0; k * k]);
        let mut raw = vec![0.0; k];
        let mut d_raw = vec![0.0; k];

        // Standardized edge offsets. On a uniform grid (a_i - c_j) depends only
        // on i - j, so 2K tail evaluations cover the whole matrix.
        let lattice = grid.uniform_width().map(|w| EdgeLattice::new(k, w / sigma));

        for j in 0..k {
            match &lattice {
                Some(lat) => {
                    for (kk, (r, dr)) in raw.iter_mut().zip(d_raw.iter_mut()).enumerate() {
                        let (lo, hi) = (lat.offset(kk, j), lat.offset(kk + 1, j));
                        *r = lat.mass(lo, hi);
                        if derivative {
                            *dr = -(lat.u[hi] * lat.pdf[hi] - lat.u[lo] * lat.pdf[lo]) / sigma;
                        }
                    }
                }
                None => {
                    let c = grid.centers[j];
                    for (kk, (r, dr)) in raw.iter_mut().zip(d_raw.iter_mut()).enumerate() {
                        let lo = (grid.edges[kk] - c) / sigma;
                        let hi = (grid.edges[kk + 1] - c) / sigma;
                        *r = normal_mass(lo, hi);
                        if derivative {
                            *dr = -(hi * norm_pdf(hi) - lo * norm_pdf(lo)) / sigma;
                        }
                    }
                }
            }
            let row = &mut rows[j * k..(j + 1) * k];
            let mut total = 0.0;
            let mut d_total = 0.0;
            for kk in 0..k {
                if raw[kk] > TRANSITION_FLOOR {
                    row[kk] = raw[kk];
                    d_total += d_raw[kk];
                } else {
                    row[kk] = TRANSITION_FLOOR;
                    d_raw[kk] = 0.0;
                }
                total += row[kk];
            }
            row.iter_mut().for_each(|t| *t /= total);
            if let Some(d_rows) = d_rows.as_mut() {
                let d_row = &mut d_rows[j * k..(j + 1) * k];
                for kk in 0..k {
                    d_row[kk] = (d_raw[kk] - row[kk] * d_total) / total;
                }
            }
        }
        Ok(Self { k, sigma, rows, d_sigma: d_rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row for latent bin `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.k..(j + 1) * self.k]
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.rows[j * self.k + k]
    }

    /// `∂T_{k|j}/∂σ` (panics if built without derivatives).
    pub fn d_sigma(&self, j: usize, k: usize) -> f64 {
        self.d_sigma.as_ref().expect("transition built without derivative")[j * self.k + k]
    }

    /// Observation PMF induced by a latent PMF.
    pub fn apply(&self, latent: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (j, &p) in latent.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(self.row(j)) {
                *o += p * t;
            }
        }
        out
    }
}

struct EdgeLattice {
    /// Standardized offsets `(m - K + 0.5) * w / σ` for m in 0..2K, i.e. edge
    /// index minus latent index ranging over -(K-1)..=K.
    u: Vec<f64>,
    cdf: Vec<f64>,
    sf: Vec<f64>,
    pdf: Vec<f64>,
    k: usize,
}

impl EdgeLattice {
    fn new(k: usize, w_over_sigma: f64) -> Self {
        let u: Vec<f64> = (0..2 * k).map(|m| (m as f64 - k as f64 + 0.5) * w_over_sigma).collect();
        let cdf = u.iter().map(|&x| norm_cdf(x)).collect();
        let sf = u.iter().map(|&x| norm_sf(x)).collect();
        let pdf = u.iter().map(|&x| norm_pdf(x)).collect();
        Self { u, cdf, sf, pdf, k }
    }

    /// Lattice slot of edge `i` relative to latent bin `j`.
    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        i + self.k - 1 - j
    }

    #[inline]
    fn mass(&self, lo: usize, hi: usize) -> f64 {
        if self.u[lo] >= 0.0 {
            self.sf[lo] - self.sf[hi]
        } else if self.u[hi] <= 0.0 {
            self.cdf[hi] - self.cdf[lo]
        } else {
            1.0 - self.cdf[lo] - self.sf[hi]
        }
    }
}

/// Row `j` of the transition matrix for `noise_var`.
pub fn transition_row(grid: &BinGrid, j: usize, noise_var: f64) -> Result<Vec<f64>> {
    if j >= grid.len() {
        return Err(Error::domain(format!("bin {j} out of range for K = {}", grid.len())));
    }
    Ok(TransitionMatrix::new(grid, noise_var)?.row(j).to_vec())
}

/// Observation PMF `p_k = Σ_j latent_j T_{k|j}(noise_var)`.
pub fn convolve(grid: &BinGrid, latent: &BinPmf, noise_var: f64) -> Result<BinPmf> {
    check_len(grid, latent)?;
    let t = TransitionMatrix::new(grid, noise_var)?;
    BinPmf::new(t.apply(latent.probs()))
}

/// Mean and variance of the bin-center distribution; variance floored at
/// [`VARIANCE_FLOOR`].
pub fn pmf_mean_var(grid: &BinGrid, pmf: &BinPmf) -> Result<GaussianMoments> {
    check_len(grid, pmf)?;
    let (mean, var) = mean_var(grid.centers(), pmf.probs());
    Ok(GaussianMoments { mean, variance: var.max(VARIANCE_FLOOR) })
}

/// Unfloored mean/variance of `values` under `probs` (two-pass).
pub(crate) fn mean_var(values: &[f64], probs: &[f64]) -> (f64, f64) {
    let mean: f64 = values.iter().zip(probs).map(|(c, p)| c * p).sum();
    let var: f64 = values.iter().zip(probs).map(|(c, p)| p * (c - mean) * (c - mean)).sum();
    (mean, var)
}

fn check_len(grid: &BinGrid, pmf: &BinPmf) -> Result<()> {
    if grid.len() != pmf.len() {
        return Err(Error::domain(format!("PMF has {} bins, grid has {}", pmf.len(), grid.len())));
    }
    Ok(())
}

/// Binned negative log-likelihood with the bin-width correction:
/// `-ln p_{b(y)} + ln w_{b(y)}`. Zero-mass bins are capped at `-ln ε_T`.
pub fn bar_nll(grid: &BinGrid, obs: &BinPmf, y: f64) -> Result<f64> {
    check_len(grid, obs)?;
    let b = grid.bin_index(y)?;
    Ok(-obs.probs()[b].max(TRANSITION_FLOOR).ln() + grid.widths()[b].ln())
}

/// Cross-entropy of the latent PMF at the bin of the noiseless target.
pub fn latent_cat_nll(grid: &BinGrid, latent: &BinPmf, f_star: f64) -> Result<f64> {
    check_len(grid, latent)?;
    let b = grid.bin_index(f_star)?;
    Ok(-latent.probs()[b].max(TRANSITION_FLOOR).ln())
}

/// Squared error in log-variance space.
pub fn log_var_loss(pred_var: f64, true_var: f64) -> Result<f64> {
    if !(pred_var > 0.0 && true_var > 0.0) {
        return Err(Error::domain(format!(
            "log-variance loss needs positive variances, got ({pred_var}, {true_var})"
        )));
    }
    let d = pred_var.ln() - true_var.ln();
    Ok(d * d)
}

/// Weighted sum of the observation, latent, and noise losses for one query.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    grid: &BinGrid,
    latent: &BinPmf,
    pred_var: f64,
    y: f64,
    f_star: f64,
    true_var: f64,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let mut loss = 0.0;
    if weights.lambda_y > 0.0 {
        let obs = convolve(grid, latent, pred_var)?;
        loss += weights.lambda_y * bar_nll(grid, &obs, y)?;
    }
    if weights.lambda_f > 0.0 {
        loss += weights.lambda_f * latent_cat_nll(grid, latent, f_star)?;
    }
    if weights.lambda_sigma > 0.0 {
        loss += weights.lambda_sigma * log_var_loss(pred_var, true_var)?;
    }
    Ok(loss)
}

/// Splits a Gaussian marginal into a latent `N(m, a)` and independent noise of
/// variance `s² - a`. Every `a` in `(0, s²)` recomposes to the same marginal.
pub fn decompose_gaussian(marginal: GaussianMoments, a: f64) -> Result<(GaussianMoments, f64)> {
    if !(a > 0.0 && a < marginal.variance) {
        return Err(Error::domain(format!(
            "latent variance {a} must lie in (0, {})",
            marginal.variance
        )));
    }
    Ok((GaussianMoments { mean: marginal.mean, variance: a }, marginal.variance - a))
}

/// Bin masses of `N(mean, var)`; the boundary bins absorb the tails.
pub fn discretize_gaussian(mean: f64, var: f64, grid: &BinGrid) -> Result<BinPmf> {
    if !(var > 0.0 && var.is_finite()) || !mean.is_finite() {
        return Err(Error::domain(format!("invalid Gaussian ({mean}, {var})")));
    }
    let s = var.sqrt();
    let k = grid.len();
    let e = grid.edges();
    let probs: Vec<f64> = (0..k)
        .map(|j| {
            let lo = if j == 0 { f64::NEG_INFINITY } else { (e[j] - mean) / s };
            let hi = if j == k - 1 { f64::INFINITY } else { (e[j + 1] - mean) / s };
            normal_mass(lo, hi).max(0.0)
        })
        .collect();
    BinPmf::from_weights(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_grid() -> BinGrid {
        BinGrid::uniform(0.0, 1.0, 2).unwrap()
    }

    #[test]
    fn build_grid_examples() {
        let g = unit_grid();
        assert_eq!(g.edges(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.centers(), &[0.25, 0.75]);
        let big = BinGrid::uniform(-3.0, 3.0, 999).unwrap();
        assert_eq!(big.len(), 999);
        for w in big.widths() {
            assert!((w - 6.0 / 999.0).abs() < 1e-12);
        }
        assert!(BinGrid::uniform(0.0, 1.0, 1).is_err());
        assert!(BinGrid::uniform(1.0, 1.0, 4).is_err());
        assert!(BinGrid::from_edges(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn bin_index_conventions() {
        let g = unit_grid();
        assert_eq!(g.bin_index(0.25).unwrap(), 0);
        assert_eq!(g.bin_index(0.5).unwrap(), 1);
        assert_eq!(g.bin_index(1.0).unwrap(), 1);
        assert_eq!(g.bin_index(7.0).unwrap(), 1);
        assert_eq!(g.bin_index(-7.0).unwrap(), 0);
        assert!(g.bin_index(f64::NAN).is_err());
    }

    #[test]
    fn grid_json_shape() {
        let g = unit_grid();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"edges":[0.0,0.5,1.0]}"#);
        let back: BinGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<BinGrid>(r#"{"edges":[1.0,0.0,2.0]}"#).is_err());
        let p = BinPmf::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"probs":[0.25,0.75]}"#);
    }

    #[test]
    fn transition_row_direct_phi() {
        let g = BinGrid::uniform(-1.0, 1.0, 2).unwrap();
        let row = transition_row(&g, 0, 0.25).unwrap();
        let a = norm_cdf(1.0) - norm_cdf(-1.0);
        let b = norm_cdf(3.0) - norm_cdf(1.0);
        assert!((row[0] - a / (a + b)).abs() < 1e-15);
        assert!((row[1] - b / (a + b)).abs() < 1e-15);
        // Same values through the non-uniform code path.
        let g2 = BinGrid::from_edges(vec![-1.0, 0.0, 1.0 + 1e-7]).unwrap();
        assert!(g2.uniform_width().is_none());
        let row2 = transition_row(&g2, 0, 0.25).unwrap();
        assert!((row2[0] - a / (a + b)).abs() < 1e-6);
    }

    #[test]
    fn vanishing_noise_is_identity() {
        let g = BinGrid::uniform(-2.0, 2.0, 16).unwrap();
        for j in 0..16 {
            let row = transition_row(&g, j, 1e-16).unwrap();
            assert!((row[j] - 1.0).abs() < 1e-6);
        }
        let latent = BinPmf::uniform(16);
        let out = convolve(&g, &latent, 1e-16).unwrap();
        assert!(out.total_variation(&latent) < 1e-6);
    }

    #[test]
    fn center_row_is_symmetric() {
        let g = BinGrid::uniform(-3.0, 3.0, 21).unwrap();
        for var in [0.01, 0.3, 2.0, 40.0] {
            let row = transition_row(&g, 10, var).unwrap();
            for k in 0..21 {
                assert!((row[k] - row[20 - k]).abs() < 1e-12, "var {var} k {k}");
            }
        }
    }

    #[test]
    fn point_mass_latent_gives_transition_row() {
        let g = BinGrid::uniform(-3.0, 3.0, 32).unwrap();
        let out = convolve(&g, &BinPmf::one_hot(32, 7), 0.4).unwrap();
        assert_eq!(out.probs(), transition_row(&g, 7, 0.4).unwrap().as_slice());
    }

    #[test]
    fn uniform_and_general_paths_agree() {
        let g = BinGrid::uniform(-3.0, 3.0, 40).unwrap();
        let g_general = BinGrid { uniform_width: None, ..g.clone() };
        for var in [1e-4, 0.05, 1.0, 9.0] {
            let a = TransitionMatrix::with_sigma_derivative(&g, var).unwrap();
            let b = TransitionMatrix::with_sigma_derivative(&g_general, var).unwrap();
            for j in 0..40 {
                for k in 0..40 {
                    assert!((a.get(j, k) - b.get(j, k)).abs() < 1e-12);
                    assert!((a.d_sigma(j, k) - b.d_sigma(j, k)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sigma_derivative_matches_finite_differences() {
        let g = BinGrid::uniform(-2.0, 2.0, 12).unwrap();
        let sigma: f64 = 0.37;
        let h = 1e-6;
        let t = TransitionMatrix::with_sigma_derivative(&g, sigma * sigma).unwrap();
        let tp = TransitionMatrix::new(&g, (sigma + h).powi(2)).unwrap();
        let tm = TransitionMatrix::new(&g, (sigma - h).powi(2)).unwrap();
        for j in 0..12 {
            for k in 0..12 {
                let fd = (tp.get(j, k) - tm.get(j, k)) / (2.0 * h);
                assert!((fd - t.d_sigma(j, k)).abs() < 1e-6, "j {j} k {k}: {fd} vs {}", t.d_sigma(j, k));
            }
        }
    }

    #[test]
    fn convolution_matches_monte_carlo() {
        // Sampling oracle: draw a latent bin, add Gaussian noise, keep the draw
        // only when it lands inside the grid (the kernel is truncated to the
        // grid range and renormalized per latent bin), then histogram.
        let g = BinGrid::uniform(-3.0, 3.0, 64).unwrap();
        let mut r = rng::stream(11, 0, 0);
        let weights: Vec<f64> = (0..64).map(|_| r.random::<f64>().powi(3)).collect();
        let latent = BinPmf::from_weights(weights).unwrap();
        let var = 0.3;
        let exact = convolve(&g, &latent, var).unwrap();
        let hist = monte_carlo_histogram(&g, &latent, var, 1_000_000, &mut r);
        assert!(total_variation(&hist, exact.probs()) < 0.01);
    }

    pub(crate) fn monte_carlo_histogram(
        g: &BinGrid,
        latent: &BinPmf,
        var: f64,
        n: usize,
        r: &mut impl Rng,
    ) -> Vec<f64> {
        let cdf: Vec<f64> = latent
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let sd = var.sqrt();
        let mut counts = vec![0usize; g.len()];
        for _ in 0..n {
            let u: f64 = r.random();
            let j = cdf.partition_point(|c| *c < u).min(g.len() - 1);
            let v = loop {
                let z: f64 = StandardNormal.sample(r);
                let v = g.centers()[j] + sd * z;
                if v >= g.lo() && v <= g.hi() {
                    break v;
                }
            };
            counts[g.bin_index(v).unwrap()] += 1;
        }
        counts.into_iter().map(|c| c as f64 / n as f64).collect()
    }

    #[test]
    fn moments_examples() {
        let g = BinGrid::uniform(-1.0, 1.0, 8).unwrap();
        let m = pmf_mean_var(&g, &BinPmf::one_hot(8, 3)).unwrap();
        assert_eq!(m.mean, g.centers()[3]);
        assert_eq!(m.variance, VARIANCE_FLOOR);
        let u = pmf_mean_var(&g, &BinPmf::uniform(8)).unwrap();
        assert!(u.mean.abs() < 1e-15);
        let g2 = BinGrid::uniform(-2.0, 2.0, 2).unwrap();
        let two = pmf_mean_var(&g2, &BinPmf::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!((two.mean, two.variance), (0.0, 1.0));
    }

    #[test]
    fn loss_examples() {
        let k = 5;
        let g = BinGrid::uniform(0.0, k as f64, k).unwrap();
        let u = BinPmf::uniform(k);
        assert!((bar_nll(&g, &u, 2.5).unwrap() - (k as f64).ln()).abs() < 1e-12);
        assert!(bar_nll(&g, &BinPmf::one_hot(k, 2), 2.5).unwrap().abs() < 1e-12);
        let capped = bar_nll(&g, &BinPmf::one_hot(k, 2), 0.5).unwrap();
        assert!((capped - (-TRANSITION_FLOOR.ln() + 1f64.ln())).abs() < 1e-9);

        assert!((latent_cat_nll(&g, &u, 1.2).unwrap() - (k as f64).ln()).abs() < 1e-12);
        assert_eq!(latent_cat_nll(&g, &BinPmf::one_hot(k, 1), 1.2).unwrap(), 0.0);
        let half = BinPmf::new(vec![0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!((latent_cat_nll(&g, &half, 0.3).unwrap() - 2f64.ln()).abs() < 1e-15);

        assert_eq!(log_var_loss(0.3, 0.3).unwrap(), 0.0);
        assert!((log_var_loss(std::f64::consts::E * 0.3, 0.3).unwrap() - 1.0).abs() < 1e-12);
        let direct = (0.01f64).ln().powi(2);
        assert!((log_var_loss(0.01, 1.0).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 21.2076).abs() < 1e-3);
        assert!(log_var_loss(0.0, 1.0).is_err());
        assert!(log_var_loss(1.0, -1.0).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let k = 6;
        let g = BinGrid::uniform(0.0, k as f64, k).unwrap();
        let latent = BinPmf::new(vec![0.1, 0.2, 0.3, 0.2, 0.1, 0.1]).unwrap();
        let only_f = LossWeights::new(0.0, 1.0, 0.0).unwrap();
        let l = total_loss(&g, &latent, 0.5, 2.5, 2.5, 0.7, &only_f).unwrap();
        assert_eq!(l, latent_cat_nll(&g, &latent, 2.5).unwrap());

        let d = LossWeights::default();
        assert_eq!((d.lambda_y, d.lambda_f, d.lambda_sigma), (1.0, 1.0, 0.1));
        let full = total_loss(&g, &latent, 0.5, 2.5, 2.5, 0.7, &d).unwrap();
        let obs = convolve(&g, &latent, 0.5).unwrap();
        let manual = bar_nll(&g, &obs, 2.5).unwrap()
            + latent_cat_nll(&g, &latent, 2.5).unwrap()
            + 0.1 * log_var_loss(0.5, 0.7).unwrap();
        assert!((full - manual).abs() < 1e-12);

        // Perfect latent, tiny matching noise, unit-width bin: every term vanishes.
        let perfect = BinPmf::one_hot(k, 3);
        let l = total_loss(&g, &perfect, 1e-6, 3.5, 3.5, 1e-6, &d).unwrap();
        assert!(l.abs() < 1e-9, "{l}");
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let (lat, noise) = decompose_gaussian(GaussianMoments::new(0.0, 1.0).unwrap(), 0.5).unwrap();
        assert_eq!((lat.mean, lat.variance, noise), (0.0, 0.5, 0.5));
        let (lat, noise) = decompose_gaussian(GaussianMoments::new(2.0, 4.0).unwrap(), 1.0).unwrap();
        assert_eq!((lat.mean, lat.variance, noise), (2.0, 1.0, 3.0));
        assert_eq!(lat.variance + noise, 4.0);
        let m = GaussianMoments::new(0.0, 1.0).unwrap();
        assert!(decompose_gaussian(m, 0.0).is_err());
        assert!(decompose_gaussian(m, 1.0).is_err());
    }

    #[test]
    fn two_splits_give_same_observation_law() {
        let (m, s2) = (0.7, 2.5);
        let s = f64::sqrt(s2);
        let grid = BinGrid::uniform(m - 6.0 * s, m + 6.0 * s, 999).unwrap();
        let marginal = GaussianMoments::new(m, s2).unwrap();
        let obs = |a: f64| {
            let (lat, noise) = decompose_gaussian(marginal, a).unwrap();
            let latent = discretize_gaussian(lat.mean, lat.variance, &grid).unwrap();
            convolve(&grid, &latent, noise).unwrap()
        };
        assert!(obs(0.2).total_variation(&obs(2.1)) < 0.005);
    }

    #[test]
    fn discretized_gaussian_properties() {
        let g = BinGrid::uniform(-1.0, 1.0, 10).unwrap();
        let spike = discretize_gaussian(0.05, 1e-12, &g).unwrap();
        assert!((spike.probs()[5] - 1.0).abs() < 1e-12);
        let sym = discretize_gaussian(0.0, 1.0, &g).unwrap();
        for k in 0..10 {
            assert!((sym.probs()[k] - sym.probs()[9 - k]).abs() < 1e-12);
        }
        let fine = BinGrid::uniform(-6.0, 6.0, 999).unwrap();
        let m = pmf_mean_var(&fine, &discretize_gaussian(0.0, 1.0, &fine).unwrap()).unwrap();
        assert!(m.mean.abs() < 1e-3);
        assert!((m.variance - 1.0).abs() < 5e-3);
    }

    fn arb_pmf(k: usize) -> impl Strategy<Value = BinPmf> {
        prop::collection::vec(0.0f64..1.0, k)
            .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
            .prop_map(|w| BinPmf::from_weights(w).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rows_are_distributions(var in 1e-6f64..10.0, j in 0usize..24) {
            let g = BinGrid::uniform(-3.0, 3.0, 24).unwrap();
            let row = transition_row(&g, j, var).unwrap();
            prop_assert!(row.iter().all(|t| *t >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn convolve_yields_valid_pmf(latent in arb_pmf(24), var in 1e-6f64..10.0) {
            let g = BinGrid::uniform(-3.0, 3.0, 24).unwrap();
            let out = convolve(&g, &latent, var).unwrap();
            prop_assert!(out.probs().iter().all(|p| *p >= 0.0));
            prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn interior_latent_variance_grows_and_mean_is_kept(
            w in prop::collection::vec(0.0f64..1.0, 11),
            base in 0.002f64..0.01,
        ) {
            // Latent mass confined to the central 11 of 64 bins on [-4, 4]:
            // at least 3.3 units from either boundary, so every ladder sigma
            // (up to 1.0) keeps 3 sigma of clearance.
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let g = BinGrid::uniform(-4.0, 4.0, 64).unwrap();
            let mut probs = vec![0.0; 64];
            probs[26..37].copy_from_slice(&w);
            let latent = BinPmf::from_weights(probs).unwrap();
            let lm = pmf_mean_var(&g, &latent).unwrap();
            let mut prev = lm.variance;
            let mut var = base;
            while var <= 1.0 {
                let m = pmf_mean_var(&g, &convolve(&g, &latent, var).unwrap()).unwrap();
                prop_assert!(m.variance >= prev - 1e-12, "var {} -> {} at sigma2 {}", prev, m.variance, var);
                prop_assert!((m.mean - lm.mean).abs() < 0.5 * g.max_width());
                prev = m.variance;
                var *= 2.0;
            }
        }

        #[test]
        fn bar_nll_prefers_truth(truth in arb_pmf(12), seed in 0u64..1000) {
            // Expected bar NLL under a discrete truth placed on bin centers.
            let g = BinGrid::uniform(-3.0, 3.0, 12).unwrap();
            let expected = |q: &BinPmf| -> f64 {
                g.centers().iter().zip(truth.probs())
                    .map(|(c, p)| p * bar_nll(&g, q, *c).unwrap())
                    .sum()
            };
            let base = expected(&truth);
            let mut r = rng::stream(seed, 0, 99);
            for _ in 0..20 {
                let perturbed: Vec<f64> = truth.probs().iter()
                    .map(|p| p * (0.5 + r.random::<f64>()) + 0.01 * r.random::<f64>())
                    .collect();
                let q = BinPmf::from_weights(perturbed).unwrap();
                prop_assert!(expected(&q) >= base - 1e-12);
            }
        }
    }
}
