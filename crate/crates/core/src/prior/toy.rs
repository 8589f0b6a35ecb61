//! Two-hypothesis prior whose posterior is available by enumeration.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LatentFamily, SyntheticTask};
use crate::bins::{BinGrid, BinPmf};
use crate::error::Result;
use crate::rng;

/// Two equiprobable hypotheses on `x ∈ [-1, 1]`. Hypothesis `h` has the
/// constant latent `levels[h]` and noise sd `base_sd · exp(slopes[h] · x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoHypothesisPrior {
    pub n_context: usize,
    pub n_queries: usize,
    pub levels: [f64; 2],
    pub base_sd: f64,
    pub slopes: [f64; 2],
}

impl Default for TwoHypothesisPrior {
    fn default() -> Self {
        Self { n_context: 4, n_queries: 8, levels: [-0.375, 0.375], base_sd: 0.4, slopes: [0.0, 0.3] }
    }
}

impl TwoHypothesisPrior {
    pub fn noise_sd(&self, h: usize, x: f64) -> f64 {
        self.base_sd * (self.slopes[h] * x).exp()
    }

    pub fn sample(&self, seed: u64) -> SyntheticTask {
        let mut r = rng::stream(seed, 0, rng::tag::TASK);
        let h = usize::from(r.random_bool(0.5));
        let n = self.n_context + self.n_queries;
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
        let mut noise = rng::stream(seed, 0, rng::tag::OBS_NOISE);
        let sd: Vec<f64> = xs.iter().map(|&x| self.noise_sd(h, x)).collect();
        let y = sd
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(&mut noise);
                self.levels[h] + s * z
            })
            .collect();
        SyntheticTask {
            rng_seed: seed,
            d: 1,
            n,
            n_context: self.n_context,
            x: xs.iter().map(|&x| vec![x]).collect(),
            f: vec![self.levels[h]; n],
            sigma2: sd.iter().map(|s| s * s).collect(),
            y,
            hetero_flag: self.slopes[h] != 0.0,
            family: LatentFamily::TwoHypothesis,
        }
    }

    /// Posterior probabilities of the two hypotheses given context pairs.
    pub fn posterior(&self, context_x: &[f64], context_y: &[f64]) -> [f64; 2] {
        let loglik = |h: usize| -> f64 {
            context_x
                .iter()
                .zip(context_y)
                .map(|(&x, &y)| {
                    let s = self.noise_sd(h, x);
                    let z = (y - self.levels[h]) / s;
                    -0.5 * z * z - s.ln()
                })
                .sum()
        };
        let (a, b) = (loglik(0), loglik(1));
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        [ea / (ea + eb), eb / (ea + eb)]
    }

    /// Exact conditional law of the binned latent.
    pub fn latent_pmf(&self, grid: &BinGrid, post: [f64; 2]) -> Result<BinPmf> {
        let mut w = vec![0.0; grid.len()];
        for h in 0..2 {
            w[grid.bin_index(self.levels[h])?] += post[h];
        }
        BinPmf::from_weights(w)
    }

    /// `E[log σ²(x*) | D]`.
    pub fn expected_log_var(&self, x: f64, post: [f64; 2]) -> f64 {
        (0..2).map(|h| post[h] * 2.0 * self.noise_sd(h, x).ln()).sum()
    }

    /// Variance of the binned latent `c_{b(F*)}` given the context.
    pub fn latent_var(&self, grid: &BinGrid, post: [f64; 2]) -> Result<f64> {
        let c = [grid.centers()[grid.bin_index(self.levels[0])?], grid.centers()[grid.bin_index(self.levels[1])?]];
        let m = post[0] * c[0] + post[1] * c[1];
        Ok(post[0] * (c[0] - m).powi(2) + post[1] * (c[1] - m).powi(2))
    }
}
