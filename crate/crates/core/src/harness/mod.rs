//! Sequential-experiment engine: BO and AL loops, metrics, ranking, reports.

pub mod al;
pub mod bo;
pub mod metrics;
pub mod ranks;
pub mod record;
pub mod report;
pub mod teaser;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acq::{AcqRule, AcqSpec, Source};
use crate::error::{Error, Result};
use crate::gp::HyperGrid;
use crate::model::{Checkpoint, ModelParams, Variant};

pub use metrics::{compute_metrics, MetricsBundle};
pub use ranks::{aggregate_ranks, RankScope, RankTable, RegretCell};

/// Environment variable that overrides the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DEPFN_OUTPUT_ROOT";

/// `$DEPFN_OUTPUT_ROOT`, or `runs` when unset.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Surrogate model named in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurrogateSpec {
    /// Exact GP. With `known_noise` it is handed the benchmark's true noise
    /// variance; otherwise it fits a homoscedastic noise level.
    GpOracle {
        #[serde(default)]
        known_noise: bool,
    },
    DecoupledIcl { checkpoint: PathBuf },
    TunedIcl { checkpoint: PathBuf },
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self::GpOracle { known_noise: false }
    }
}

impl SurrogateSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::GpOracle { known_noise: false } => "gp",
            Self::GpOracle { known_noise: true } => "gp-known",
            Self::DecoupledIcl { .. } => "dec-icl",
            Self::TunedIcl { .. } => "tuned-icl",
        }
    }

    /// Rejects tuned surrogates paired with epistemic acquisition, and GP with EPIG.
    pub fn check_pairing(&self, acq: &AcqSpec) -> Result<()> {
        if matches!(self, Self::TunedIcl { .. }) && acq.source == Source::Epistemic && acq.rule != AcqRule::Random {
            return Err(Error::config("the tuned surrogate has no latent head; use --source total"));
        }
        if matches!(self, Self::GpOracle { .. }) && acq.rule == AcqRule::Epig {
            return Err(Error::config("the EPIG proxy needs model representations; use an ICL surrogate"));
        }
        Ok(())
    }
}

/// Directory name of a method: surrogate plus acquisition, or `random`.
pub fn method_label(surrogate: &SurrogateSpec, acq: &AcqSpec) -> String {
    if acq.rule == AcqRule::Random {
        "random".into()
    } else {
        format!("{}-{}", surrogate.label(), acq.label())
    }
}

/// A surrogate ready to be conditioned on data.
#[derive(Clone, Debug)]
pub(crate) enum Surrogate {
    Gp { known_noise: bool, grid: HyperGrid },
    Icl(Box<ModelParams>),
}

impl Surrogate {
    pub(crate) fn load(spec: &SurrogateSpec, grid: &HyperGrid) -> Result<Self> {
        let icl = |path: &Path, want: Variant| -> Result<Self> {
            let params = Checkpoint::load(path)?.model()?;
            if params.spec.variant != want {
                return Err(Error::config(format!(
                    "checkpoint {} holds a {:?} model, expected {want:?}",
                    path.display(),
                    params.spec.variant
                )));
            }
            Ok(Self::Icl(Box::new(params)))
        };
        match spec {
            SurrogateSpec::GpOracle { known_noise } => Ok(Self::Gp { known_noise: *known_noise, grid: grid.clone() }),
            SurrogateSpec::DecoupledIcl { checkpoint } => icl(checkpoint, Variant::Decoupled),
            SurrogateSpec::TunedIcl { checkpoint } => icl(checkpoint, Variant::Tuned),
        }
    }
}

/// Affine map putting targets on zero mean and unit spread.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub(crate) fn fit(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, sd }
    }

    pub(crate) fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub(crate) fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Status of one seed's run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

pub(crate) fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut s = seeds.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("seeds must be distinct"));
    }
    Ok(())
}

pub(crate) fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
