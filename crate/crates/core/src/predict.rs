//! Predictive distributions shared by the surrogates and acquisition rules.

use serde::{Deserialize, Serialize};

use crate::bins::{convolve, discretize_gaussian, pmf_mean_var, BinGrid, BinPmf, GaussianMoments, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::gp::PosteriorMoments;

/// Binned prediction at one query point.
///
/// Decoupled predictions carry a latent PMF and a noise variance whose
/// convolution is the observation PMF. Tuned predictions carry the
/// observation PMF only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupledPrediction {
    latent: Option<BinPmf>,
    noise_var: Option<f64>,
    obs: BinPmf,
    representation: Option<Vec<f64>>,
    latent_moments: Option<GaussianMoments>,
    obs_moments: GaussianMoments,
}

impl DecoupledPrediction {
    pub fn decoupled(grid: &BinGrid, latent: BinPmf, noise_var: f64, representation: Option<Vec<f64>>) -> Result<Self> {
        let obs = convolve(grid, &latent, noise_var)?;
        let latent_moments = pmf_mean_var(grid, &latent)?;
        let obs_moments = pmf_mean_var(grid, &obs)?;
        Ok(Self {
            latent: Some(latent),
            noise_var: Some(noise_var),
            obs,
            representation,
            latent_moments: Some(latent_moments),
            obs_moments,
        })
    }

    pub fn tuned(grid: &BinGrid, obs: BinPmf, representation: Option<Vec<f64>>) -> Result<Self> {
        let obs_moments = pmf_mean_var(grid, &obs)?;
        Ok(Self { latent: None, noise_var: None, obs, representation, latent_moments: None, obs_moments })
    }

    /// Discretizes Gaussian GP moments onto `grid`.
    pub fn from_gaussian(grid: &BinGrid, m: &PosteriorMoments) -> Result<Self> {
        let latent = discretize_gaussian(m.mu_f, m.v_epi.max(VARIANCE_FLOOR), grid)?;
        Self::decoupled(grid, latent, m.noise_var, None)
    }

    pub fn is_decoupled(&self) -> bool {
        self.latent.is_some()
    }

    pub fn latent(&self) -> Option<&BinPmf> {
        self.latent.as_ref()
    }

    pub fn noise_var(&self) -> Option<f64> {
        self.noise_var
    }

    pub fn obs(&self) -> &BinPmf {
        &self.obs
    }

    pub fn representation(&self) -> Option<&[f64]> {
        self.representation.as_deref()
    }

    /// `(μ_f, v_epi)` from the latent PMF; `None` for tuned predictions.
    pub fn latent_moments(&self) -> Option<GaussianMoments> {
        self.latent_moments
    }

    /// `(μ_y, Var p^(y))` from the observation PMF.
    pub fn obs_moments(&self) -> GaussianMoments {
        self.obs_moments
    }
}

/// Surrogate output at one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Gaussian(PosteriorMoments),
    Binned(DecoupledPrediction),
}

impl Prediction {
    pub fn representation(&self) -> Option<&[f64]> {
        match self {
            Self::Gaussian(_) => None,
            Self::Binned(p) => p.representation(),
        }
    }

    pub fn is_decoupled(&self) -> bool {
        match self {
            Self::Gaussian(_) => true,
            Self::Binned(p) => p.is_decoupled(),
        }
    }

    /// Binned view of the prediction, discretizing Gaussian moments if needed.
    pub fn to_binned(&self, grid: &BinGrid) -> Result<DecoupledPrediction> {
        match self {
            Self::Gaussian(m) => DecoupledPrediction::from_gaussian(grid, m),
            Self::Binned(p) => {
                if p.obs.len() != grid.len() {
                    return Err(Error::domain("prediction and grid disagree on K"));
                }
                Ok(p.clone())
            }
        }
    }
}

/// A surrogate already conditioned on its context.
pub trait Posterior: Sync {
    fn predict(&self, queries: &[Vec<f64>]) -> Result<Vec<Prediction>>;

    /// Whether predictions separate latent and noise uncertainty.
    fn is_decoupled(&self) -> bool;

    /// Grid of binned predictions, if any.
    fn grid(&self) -> Option<&BinGrid> {
        None
    }
}
