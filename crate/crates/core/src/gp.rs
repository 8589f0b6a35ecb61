//! Exact Gaussian-process regression with an RBF kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use crate::bins::discretize_gaussian;
use crate::error::{Error, Result};
use crate::predict::{Posterior, Prediction};
use crate::special::LN_2PI;

/// Jitter escalation steps after the initial attempt.
const JITTER_RETRIES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub amplitude: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, amplitude: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite() && amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::domain(format!("invalid RBF kernel (ℓ={lengthscale}, A={amplitude})")));
        }
        Ok(Self { lengthscale, amplitude })
    }

    /// `A² exp(-‖a-b‖² / 2ℓ²)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.amplitude * self.amplitude * unit_rbf(a, b, self.lengthscale)
    }

    /// Default initial jitter `1e-8·A²`.
    pub fn default_jitter(&self) -> f64 {
        1e-8 * self.amplitude * self.amplitude
    }
}

fn unit_rbf(a: &[f64], b: &[f64], ls: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    (-0.5 * d2 / (ls * ls)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// Per-point observation-noise variances.
    Known(Vec<f64>),
    Homoscedastic(f64),
}

impl NoiseSpec {
    fn at(&self, i: usize) -> f64 {
        match self {
            Self::Known(v) => v[i],
            Self::Homoscedastic(s) => *s,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            Self::Known(v) => v.len() == n && v.iter().all(|s| *s > 0.0 && s.is_finite()),
            Self::Homoscedastic(s) => *s > 0.0 && s.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain("noise variances must be positive, one per context point"))
        }
    }
}

/// Latent posterior moments plus the query noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    pub mu_f: f64,
    pub v_epi: f64,
    pub noise_var: f64,
    pub v_tot: f64,
}

impl PosteriorMoments {
    pub fn new(mu_f: f64, v_epi: f64, noise_var: f64) -> Self {
        Self { mu_f, v_epi, noise_var, v_tot: v_epi + noise_var }
    }
}

/// A fitted GP: context, kernel, noise, and the Cholesky factor of
/// `K + Σ + jitter·I`.
#[derive(Clone, Debug)]
pub struct GpState {
    kernel: RbfKernel,
    noise: NoiseSpec,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn gram(x: &[Vec<f64>], ls: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| unit_rbf(&x[i], &x[j], ls))
}

fn check_context(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::domain("GP context is empty"));
    }
    if x.len() != y.len() {
        return Err(Error::domain(format!("{} inputs but {} targets", x.len(), y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("ragged or non-finite GP context"));
    }
    Ok(())
}

/// Factorizes `base + jitter·I`, multiplying the jitter by ten on failure.
fn factorize(base: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut j = jitter;
    for _ in 0..=JITTER_RETRIES {
        let mut m = base.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += j;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, j));
        }
        j *= 10.0;
    }
    Err(Error::numeric(format!("Cholesky failed with jitter up to {:e}", j / 10.0)))
}

pub fn gp_fit(x: &[Vec<f64>], y: &[f64], kernel: RbfKernel, noise: NoiseSpec, jitter: f64) -> Result<GpState> {
    check_context(x, y)?;
    noise.validate(x.len())?;
    if !(jitter > 0.0) {
        return Err(Error::domain("jitter must be positive"));
    }
    let a2 = kernel.amplitude * kernel.amplitude;
    let mut base = gram(x, kernel.lengthscale) * a2;
    for i in 0..x.len() {
        base[(i, i)] += noise.at(i);
    }
    let (chol, jitter) = factorize(&base, jitter)?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    Ok(GpState { kernel, noise, x: x.to_vec(), y: y.to_vec(), chol, alpha, jitter })
}

impl GpState {
    pub fn kernel(&self) -> RbfKernel {
        self.kernel
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Predictive moments of the latent at `x_star`; `v_tot` adds `noise_at_query`.
    pub fn posterior(&self, x_star: &[f64], noise_at_query: f64) -> PosteriorMoments {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel.eval(xi, x_star)));
        let mu = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).expect("triangular factor is nonsingular");
        let a2 = self.kernel.amplitude * self.kernel.amplitude;
        PosteriorMoments::new(mu, (a2 - v.norm_squared()).max(0.0), noise_at_query)
    }

    /// Homoscedastic noise variance, or `None` in known-noise mode.
    pub fn homoscedastic_noise(&self) -> Option<f64> {
        match self.noise {
            NoiseSpec::Homoscedastic(s) => Some(s),
            NoiseSpec::Known(_) => None,
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(&self.y);
        let logdet: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * y.dot(&self.alpha) - 0.5 * logdet - 0.5 * self.y.len() as f64 * LN_2PI
    }
}

/// Queries per block in [`GpState::posterior_batch`].
const QUERY_BLOCK: usize = 128;

impl GpState {
    /// [`GpState::posterior`] over many queries with one triangular solve per block.
    pub fn posterior_batch(&self, xs: &[Vec<f64>], noise_at: impl Fn(&[f64]) -> f64 + Sync) -> Vec<PosteriorMoments> {
        let a2 = self.kernel.amplitude * self.kernel.amplitude;
        let blocks: Vec<&[Vec<f64>]> = xs.chunks(QUERY_BLOCK).collect();
        let parts = crate::par::map(&blocks, |block| {
            let ks = DMatrix::from_fn(self.x.len(), block.len(), |i, j| self.kernel.eval(&self.x[i], &block[j]));
            let mu = ks.tr_mul(&self.alpha);
            let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular factor is nonsingular");
            block
                .iter()
                .enumerate()
                .map(|(j, q)| PosteriorMoments::new(mu[j], (a2 - v.column(j).norm_squared()).max(0.0), noise_at(q)))
                .collect::<Vec<_>>()
        });
        parts.into_iter().flatten().collect()
    }
}

/// Noise variance a [`GpPosterior`] reports at a query.
#[derive(Clone)]
pub enum QueryNoise {
    Constant(f64),
    Field(std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl QueryNoise {
    pub fn at(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Field(f) => f(x),
        }
    }
}

impl std::fmt::Debug for QueryNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "Constant({v})"),
            Self::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// A fitted GP plus its query-noise model, usable by the acquisition routines.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub state: GpState,
    pub noise: QueryNoise,
}

impl GpPosterior {
    pub fn new(state: GpState, noise: QueryNoise) -> Self {
        Self { state, noise }
    }
}

impl Posterior for GpPosterior {
    fn predict(&self, queries: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        Ok(self.state.posterior_batch(queries, |q| self.noise.at(q)).into_iter().map(Prediction::Gaussian).collect())
    }

    fn is_decoupled(&self) -> bool {
        true
    }
}

pub fn gp_posterior(state: &GpState, x_star: &[f64], noise_at_query: f64) -> PosteriorMoments {
    state.posterior(x_star, noise_at_query)
}

/// Cartesian hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lengthscales: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Ignored when the noise is known.
    pub noise_vars: Vec<f64>,
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            lengthscales: log_space(0.05, 5.0, 16),
            amplitudes: log_space(0.2, 5.0, 8),
            noise_vars: log_space(1e-4, 1.0, 8),
        }
    }
}

impl HyperGrid {
    pub fn single(lengthscale: f64, amplitude: f64, noise_var: f64) -> Self {
        Self { lengthscales: vec![lengthscale], amplitudes: vec![amplitude], noise_vars: vec![noise_var] }
    }
}

/// Selected hyperparameters with their log marginal likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperChoice {
    pub kernel: RbfKernel,
    /// `None` in known-noise mode.
    pub noise_var: Option<f64>,
    pub log_ml: f64,
}

/// Exhaustive marginal-likelihood search over `grid`.
///
/// With `known_noise` only `(ℓ, A)` are searched. Ties go to the smallest
/// lengthscale, then the smallest amplitude, then the smallest noise.
pub fn gp_fit_hypers(x: &[Vec<f64>], y: &[f64], grid: &HyperGrid, known_noise: Option<&[f64]>) -> Result<HyperChoice> {
    check_context(x, y)?;
    let valid = |v: &[f64]| !v.is_empty() && v.iter().all(|s| *s > 0.0 && s.is_finite());
    if !valid(&grid.lengthscales) || !valid(&grid.amplitudes) || (known_noise.is_none() && !valid(&grid.noise_vars)) {
        return Err(Error::domain("hyperparameter grid must be non-empty and positive"));
    }
    let mut ls = grid.lengthscales.clone();
    let mut amps = grid.amplitudes.clone();
    let mut noises = grid.noise_vars.clone();
    for v in [&mut ls, &mut amps, &mut noises] {
        v.sort_by(f64::total_cmp);
    }
    let per_ls: Vec<Option<HyperChoice>> = match known_noise {
        Some(noise) => {
            NoiseSpec::Known(noise.to_vec()).validate(x.len())?;
            crate::par::map(&ls, |&l| best_known_noise(x, y, l, &amps, noise))
        }
        None => crate::par::map(&ls, |&l| best_homoscedastic(x, y, l, &amps, &noises)),
    };
    let mut best: Option<HyperChoice> = None;
    for c in per_ls.into_iter().flatten() {
        if best.is_none_or(|b| c.log_ml > b.log_ml) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::numeric("every hyperparameter candidate failed to factorize"))
}

fn best_known_noise(x: &[Vec<f64>], y: &[f64], ls: f64, amps: &[f64], noise: &[f64]) -> Option<HyperChoice> {
    let mut best: Option<HyperChoice> = None;
    for &a in amps {
        let kernel = RbfKernel { lengthscale: ls, amplitude: a };
        let Ok(state) = gp_fit(x, y, kernel, NoiseSpec::Known(noise.to_vec()), kernel.default_jitter()) else {
            continue;
        };
        let lml = state.log_marginal_likelihood();
        if lml.is_finite() && best.is_none_or(|b| lml > b.log_ml) {
            best = Some(HyperChoice { kernel, noise_var: None, log_ml: lml });
        }
    }
    best
}

/// For a fixed lengthscale, one eigendecomposition of the unit Gram matrix
/// gives the exact marginal likelihood for every `(A, σ²)` in `O(n)` each.
fn best_homoscedastic(x: &[Vec<f64>], y: &[f64], ls: f64, amps: &[f64], noises: &[f64]) -> Option<HyperChoice> {
    let n = x.len() as f64;
    let eig = SymmetricEigen::new(gram(x, ls));
    let proj = eig.eigenvectors.transpose() * DVector::from_column_slice(y);
    let proj2: Vec<f64> = proj.iter().map(|p| p * p).collect();
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let mut best: Option<HyperChoice> = None;
    for &a in amps {
        let a2 = a * a;
        let jitter = 1e-8 * a2;
        for &s in noises {
            let (mut quad, mut logdet) = (0.0, 0.0);
            for (l, p2) in lambda.iter().zip(&proj2) {
                let e = a2 * l + s + jitter;
                quad += p2 / e;
                logdet += e.ln();
            }
            let lml = -0.5 * quad - 0.5 * logdet - 0.5 * n * LN_2PI;
            if lml.is_finite() && best.is_none_or(|b| lml > b.log_ml) {
                best = Some(HyperChoice { kernel: RbfKernel { lengthscale: ls, amplitude: a }, noise_var: Some(s), log_ml: lml });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bins::{convolve, pmf_mean_var, BinGrid};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Textbook GP equations with a fresh Gauss-Jordan solve per query.
    fn direct_posterior(x: &[Vec<f64>], y: &[f64], k: RbfKernel, noise: &[f64], jitter: f64, xs: &[f64]) -> (f64, f64) {
        let n = x.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| k.eval(&x[i], &x[j])).collect();
                row[i] += noise[i] + jitter;
                row
            })
            .collect();
        let ks: Vec<f64> = x.iter().map(|xi| k.eval(xi, xs)).collect();
        // Augment with [y, k*] and eliminate.
        for (i, row) in m.iter_mut().enumerate() {
            row.push(y[i]);
            row.push(ks[i]);
        }
        for c in 0..n {
            let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for v in m[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let pivot_row = m[c].clone();
                    for (v, pv) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let alpha: Vec<f64> = m.iter().map(|r| r[n]).collect();
        let beta: Vec<f64> = m.iter().map(|r| r[n + 1]).collect();
        let mu = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let v = k.eval(xs, xs) - ks.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        (mu, v)
    }

    fn random_instance(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>, RbfKernel, Vec<f64>) {
        let mut r = rng::stream(seed, 0, 99);
        let x = (0..n).map(|_| (0..d).map(|_| r.random::<f64>()).collect()).collect();
        let y = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let k = RbfKernel::new(r.random_range(0.1..1.0), r.random_range(0.5..2.0)).unwrap();
        let noise = (0..n).map(|_| r.random_range(0.01..0.5)).collect();
        (x, y, k, noise)
    }

    #[test]
    fn single_point_shrinkage() {
        let k = RbfKernel::new(0.3, 1.5).unwrap();
        let s = gp_fit(&[vec![0.2]], &[0.8], k, NoiseSpec::Homoscedastic(0.25), 1e-300).unwrap();
        let p = s.posterior(&[0.2], 0.25);
        assert!((p.mu_f - 2.25 * 0.8 / 2.5).abs() < 1e-12);
        assert!((p.v_epi - (2.25 - 2.25 * 2.25 / 2.5)).abs() < 1e-12);
        assert_eq!(p.v_tot, p.v_epi + p.noise_var);
    }

    #[test]
    fn rejects_bad_context_and_escalates_jitter() {
        let k = RbfKernel::new(0.3, 1.0).unwrap();
        assert!(gp_fit(&[], &[], k, NoiseSpec::Homoscedastic(0.1), 1e-8).is_err());
        assert!(gp_fit(&[vec![0.0]], &[1.0], k, NoiseSpec::Homoscedastic(0.0), 1e-8).is_err());
        let x = vec![vec![0.5]; 6];
        let s = gp_fit(&x, &[1.0; 6], k, NoiseSpec::Homoscedastic(1e-300), 1e-18).unwrap();
        assert!(s.jitter() > 1e-18);
    }

    #[test]
    fn interpolation_and_reversion_limits() {
        let k = RbfKernel::new(0.2, 1.3).unwrap();
        let x = vec![vec![0.1, 0.2], vec![0.6, 0.9], vec![0.8, 0.1]];
        let y = vec![0.4, -1.0, 2.0];
        let s = gp_fit(&x, &y, k, NoiseSpec::Homoscedastic(1e-10), 1e-12).unwrap();
        let p = s.posterior(&x[1], 0.0);
        assert!((p.mu_f + 1.0).abs() < 1e-6 && p.v_epi < 1e-6);
        let far = s.posterior(&[40.0, -40.0], 0.0);
        assert!((far.v_epi - 1.69).abs() < 1e-6 && far.mu_f.abs() < 1e-6);
    }

    #[test]
    fn matches_direct_solve() {
        for seed in 0..100 {
            let (x, y, k, noise) = random_instance(seed, 5, 2);
            let s = gp_fit(&x, &y, k, NoiseSpec::Known(noise.clone()), k.default_jitter()).unwrap();
            let xs = [0.3, 0.7];
            let p = s.posterior(&xs, 0.1);
            let (mu, v) = direct_posterior(&x, &y, k, &noise, s.jitter(), &xs);
            assert!((p.mu_f - mu).abs() <= 1e-8 * mu.abs().max(1e-12), "seed {seed}");
            assert!((p.v_epi - v).abs() <= 1e-8 * v.abs(), "seed {seed}");
        }
    }

    #[test]
    fn known_noise_head_is_exact() {
        let (x, y, k, noise) = random_instance(3, 8, 1);
        let s = gp_fit(&x, &y, k, NoiseSpec::Known(noise), 1e-10).unwrap();
        let p = s.posterior(&[0.4], 0.0371);
        assert_eq!(p.noise_var, 0.0371);
        assert_eq!(p.v_tot, p.v_epi + 0.0371);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn more_data_never_increases_epistemic_variance(seed in 0u64..10_000, n in 1usize..12) {
            let (x, y, k, noise) = random_instance(seed, n + 1, 2);
            let small = gp_fit(&x[..n], &y[..n], k, NoiseSpec::Known(noise[..n].to_vec()), 1e-10).unwrap();
            let big = gp_fit(&x, &y, k, NoiseSpec::Known(noise.clone()), 1e-10).unwrap();
            for q in [[0.0, 0.0], [0.5, 0.5], [0.9, 0.1], x[n].clone().try_into().unwrap()] {
                prop_assert!(big.posterior(&q, 0.1).v_epi <= small.posterior(&q, 0.1).v_epi + 1e-9);
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let g = BinGrid::uniform(-1.0, 1.0, 9).unwrap();
        let p = discretize_gaussian(0.0, 1e-12, &g).unwrap();
        assert!((p.probs()[4] - 1.0).abs() < 1e-12);
        let g = BinGrid::uniform(-3.0, 3.0, 20).unwrap();
        let p = discretize_gaussian(0.0, 1.0, &g).unwrap();
        for j in 0..10 {
            assert!((p.probs()[j] - p.probs()[19 - j]).abs() < 1e-12);
        }
        let g = BinGrid::uniform(-6.0, 6.0, 999).unwrap();
        let m = pmf_mean_var(&g, &discretize_gaussian(0.0, 1.0, &g).unwrap()).unwrap();
        assert!(m.mean.abs() < 1e-3 && (m.variance - 1.0).abs() < 5e-3);
    }

    #[test]
    fn convolved_oracle_matches_total_discretization() {
        let g = BinGrid::uniform(-8.0, 8.0, 999).unwrap();
        for seed in 0..10 {
            let (x, y, k, noise) = random_instance(seed, 6, 1);
            let s = gp_fit(&x, &y, k, NoiseSpec::Known(noise), 1e-10).unwrap();
            let p = s.posterior(&[0.37], 0.2);
            let latent = discretize_gaussian(p.mu_f, p.v_epi.max(1e-12), &g).unwrap();
            let obs = convolve(&g, &latent, p.noise_var).unwrap();
            let direct = discretize_gaussian(p.mu_f, p.v_tot, &g).unwrap();
            assert!(obs.total_variation(&direct) < 0.01);
        }
    }

    #[test]
    fn eigen_search_matches_cholesky_likelihood() {
        let (x, y, _, _) = random_instance(11, 15, 2);
        let grid = HyperGrid { lengthscales: vec![0.3], amplitudes: vec![0.7, 1.4], noise_vars: vec![0.05, 0.2] };
        let best = gp_fit_hypers(&x, &y, &grid, None).unwrap();
        let state = gp_fit(&x, &y, best.kernel, NoiseSpec::Homoscedastic(best.noise_var.unwrap()), best.kernel.default_jitter()).unwrap();
        assert!((state.log_marginal_likelihood() - best.log_ml).abs() < 1e-8);
        for &a in &grid.amplitudes {
            for &s in &grid.noise_vars {
                let k = RbfKernel::new(0.3, a).unwrap();
                let st = gp_fit(&x, &y, k, NoiseSpec::Homoscedastic(s), k.default_jitter()).unwrap();
                assert!(st.log_marginal_likelihood() <= best.log_ml + 1e-8);
            }
        }
    }

    #[test]
    fn hyper_recovery() {
        let grid = HyperGrid::default();
        let true_ls = grid.lengthscales[6];
        let mut hits = 0;
        for seed in 0..10 {
            let mut r = rng::stream(seed, 0, 98);
            let x: Vec<Vec<f64>> = (0..200).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
            let f = crate::prior::sample_latent_rff_gp(&x, true_ls, 1.0, 2048, seed).unwrap();
            let y: Vec<f64> = f
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    v + 0.1 * e
                })
                .collect();
            let c = gp_fit_hypers(&x, &y, &grid, None).unwrap();
            let pos = grid.lengthscales.iter().position(|l| *l == c.kernel.lengthscale).unwrap();
            hits += usize::from(pos.abs_diff(6) <= 1);
        }
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn degenerate_hyper_inputs() {
        let x = vec![vec![0.1], vec![0.5], vec![0.9]];
        let c = gp_fit_hypers(&x, &[1.0, 2.0, 0.5], &HyperGrid::single(0.4, 1.1, 0.3), None).unwrap();
        assert_eq!((c.kernel.lengthscale, c.kernel.amplitude, c.noise_var), (0.4, 1.1, Some(0.3)));
        assert!(gp_fit_hypers(&x, &[2.0; 3], &HyperGrid::default(), None).is_ok());
        assert!(gp_fit_hypers(&x, &[2.0; 3], &HyperGrid::default(), Some(&[0.1, 0.1, 0.1])).is_ok());
        let empty = HyperGrid { lengthscales: vec![], ..HyperGrid::default() };
        assert!(gp_fit_hypers(&x, &[2.0; 3], &empty, None).is_err());
    }

    #[test]
    fn batch_matches_pointwise() {
        let mut r = rng::stream(17, 0, 3);
        let (x, y, k, noise) = random_instance(17, 12, 2);
        let s = gp_fit(&x, &y, k, NoiseSpec::Known(noise), 1e-10).unwrap();
        let qs: Vec<Vec<f64>> = (0..300).map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect();
        let post = GpPosterior::new(s.clone(), QueryNoise::Field(std::sync::Arc::new(|q: &[f64]| 0.1 + q[0])));
        let preds = post.predict(&qs).unwrap();
        for (q, p) in qs.iter().zip(&preds) {
            let single = s.posterior(q, 0.1 + q[0]);
            let Prediction::Gaussian(m) = p else { panic!("expected Gaussian") };
            assert!((m.mu_f - single.mu_f).abs() < 1e-12 && (m.v_epi - single.v_epi).abs() < 1e-12);
            assert_eq!(m.noise_var, single.noise_var);
        }
    }
}
