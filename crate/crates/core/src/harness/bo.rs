//! Bayesian-optimization loop over the synthetic benchmarks.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::record::JsonlWriter;
use super::{check_seeds, default_output_root, default_seeds, method_label, RunStatus, Standardizer, Surrogate, SurrogateSpec};
use crate::acq::{select_point, AcqSpec, Selection};
use crate::bench::Benchmark;
use crate::error::{Error, Result};
use crate::gp::{gp_fit, gp_fit_hypers, GpPosterior, HyperGrid, NoiseSpec, QueryNoise};
use crate::model::{IclPosterior, ModelParams};
use crate::predict::Posterior;
use crate::rng;
use crate::sobol::sobol_points;

/// Floor on known noise variances after standardization.
const KNOWN_NOISE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub benchmark: String,
    pub surrogate: SurrogateSpec,
    pub acq: AcqSpec,
    /// Acquisitions after the initial design.
    pub n_steps: usize,
    pub n_init: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Adds `wall_ms` to every step; records are then no longer replayable byte for byte.
    pub record_timing: bool,
    pub hyper_grid: HyperGrid,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            benchmark: "branin".into(),
            surrogate: SurrogateSpec::default(),
            acq: AcqSpec::default(),
            n_steps: 100,
            n_init: 8,
            seeds: default_seeds(),
            output_dir: default_output_root(),
            record_timing: false,
            hyper_grid: HyperGrid::default(),
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<Benchmark> {
        let bench = Benchmark::by_name(&self.benchmark)?;
        self.acq.validate().map_err(|e| Error::config(e.to_string()))?;
        self.surrogate.check_pairing(&self.acq)?;
        check_seeds(&self.seeds)?;
        if self.n_init == 0 {
            return Err(Error::config("the initial design needs at least one point"));
        }
        Ok(bench)
    }

    pub fn method(&self) -> String {
        method_label(&self.surrogate, &self.acq)
    }

    /// `<output>/<benchmark>/<method>/<seed>.jsonl`
    pub fn record_path(&self, seed: u64) -> PathBuf {
        self.method_dir().join(format!("{seed}.jsonl"))
    }

    pub fn method_dir(&self) -> PathBuf {
        self.output_dir.join(&self.benchmark).join(self.method())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Acquire,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoStep {
    /// 1-based; the initial design occupies the first steps.
    pub step: usize,
    pub phase: Phase,
    pub x: Vec<f64>,
    pub y_observed: f64,
    pub latent_f: f64,
    pub best_latent: f64,
    pub simple_regret: f64,
    /// EI incumbent, in objective units.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub incumbent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acq_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoSummary {
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub n_evaluations: usize,
    pub final_regret: Option<f64>,
    pub best_x: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoLine {
    Step(BoStep),
    Summary(BoSummary),
}

/// Trajectory and outcome of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BoRecord {
    pub seed: u64,
    pub steps: Vec<BoStep>,
    pub summary: BoSummary,
}

/// Shared initial design: scrambled Sobol points keyed by the seed alone.
pub fn initial_design(bench: &Benchmark, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let u = sobol_points(n, bench.dim(), Some(rng::derive_seed(seed, 0, rng::tag::INIT_DESIGN)))?;
    Ok(u.into_iter().map(|p| from_unit(&bench.bounds, &p)).collect())
}

fn to_unit(bounds: &[(f64, f64)], x: &[f64]) -> Vec<f64> {
    x.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
}

fn from_unit(bounds: &[(f64, f64)], u: &[f64]) -> Vec<f64> {
    u.iter().zip(bounds).map(|(v, (lo, hi))| (lo + v * (hi - lo)).clamp(*lo, *hi)).collect()
}

/// Unit-cube coordinates rescaled to zero mean and unit variance, matching the
/// z-scored inputs the in-context model sees in training.
const ICL_SCALE: f64 = 3.464_101_615_137_754_6;

/// Conditions the surrogate on the history and picks the next point (in objective coordinates).
fn propose(
    surrogate: &Surrogate,
    bench: &Benchmark,
    hist_x: &[Vec<f64>],
    hist_y: &[f64],
    acq: &AcqSpec,
    seed: u64,
) -> Result<(Vec<f64>, Selection, Standardizer)> {
    let stdz = Standardizer::fit(hist_y);
    let y: Vec<f64> = hist_y.iter().map(|&v| stdz.apply(v)).collect();
    let units: Vec<Vec<f64>> = hist_x.iter().map(|x| to_unit(&bench.bounds, x)).collect();
    let d = bench.dim();
    let (posterior, model_x, bounds): (Box<dyn Posterior>, Vec<Vec<f64>>, Vec<(f64, f64)>) = match surrogate {
        Surrogate::Gp { known_noise, grid } => {
            let post = if *known_noise {
                let b = bench.clone();
                let sd2 = stdz.sd * stdz.sd;
                let field = Arc::new(move |u: &[f64]| (b.noise_sd(&from_unit(&b.bounds, u)).powi(2) / sd2).max(KNOWN_NOISE_FLOOR));
                let noise: Vec<f64> = units.iter().map(|u| field(u)).collect();
                let choice = gp_fit_hypers(&units, &y, grid, Some(&noise))?;
                let state = gp_fit(&units, &y, choice.kernel, NoiseSpec::Known(noise), choice.kernel.default_jitter())?;
                GpPosterior::new(state, QueryNoise::Field(field))
            } else {
                let choice = gp_fit_hypers(&units, &y, grid, None)?;
                let s2 = choice.noise_var.expect("homoscedastic fit reports a noise level");
                let state = gp_fit(&units, &y, choice.kernel, NoiseSpec::Homoscedastic(s2), choice.kernel.default_jitter())?;
                GpPosterior::new(state, QueryNoise::Constant(s2))
            };
            (Box::new(post), units, vec![(0.0, 1.0); d])
        }
        Surrogate::Icl(params) => {
            check_icl_dim(params, d)?;
            let z: Vec<Vec<f64>> = units.iter().map(|u| u.iter().map(|v| (v - 0.5) * ICL_SCALE).collect()).collect();
            let post = IclPosterior::new((**params).clone(), z.clone(), y)?;
            (Box::new(post), z, vec![(-0.5 * ICL_SCALE, 0.5 * ICL_SCALE); d])
        }
    };
    let sel = select_point(posterior.as_ref(), &model_x, &bounds, acq, seed)?;
    let u: Vec<f64> = match surrogate {
        Surrogate::Gp { .. } => sel.x.clone(),
        Surrogate::Icl(_) => sel.x.iter().map(|z| z / ICL_SCALE + 0.5).collect(),
    };
    Ok((from_unit(&bench.bounds, &u), sel, stdz))
}

fn check_icl_dim(params: &ModelParams, d: usize) -> Result<()> {
    if d > params.spec.input_dim_max {
        return Err(Error::config(format!(
            "benchmark has {d} dimensions but the model accepts at most {}",
            params.spec.input_dim_max
        )));
    }
    Ok(())
}

/// Runs one seed, resuming from whatever the record file already holds.
fn run_seed(config: &BoConfig, bench: &Benchmark, surrogate: &Surrogate, seed: u64) -> Result<BoRecord> {
    let path = config.record_path(seed);
    let (mut out, lines) = JsonlWriter::resume::<BoLine>(&path)?;
    let mut steps = Vec::new();
    for line in lines {
        match line {
            BoLine::Step(s) => steps.push(s),
            BoLine::Summary(summary) => return Ok(BoRecord { seed, steps, summary }),
        }
    }
    if steps.iter().enumerate().any(|(i, s)| s.step != i + 1) {
        return Err(Error::contract(format!("{}: steps are not contiguous", path.display())));
    }
    let result = continue_seed(config, bench, surrogate, seed, &mut steps, &mut out);
    let summary = match result {
        Ok(()) => {
            let best = steps.iter().min_by(|a, b| a.latent_f.total_cmp(&b.latent_f));
            BoSummary {
                status: RunStatus::Ok,
                error: None,
                n_evaluations: steps.len(),
                final_regret: steps.last().map(|s| s.simple_regret),
                best_x: best.map(|s| s.x.clone()),
            }
        }
        Err(e) => {
            log::error!("{} seed {seed}: {e}", config.method());
            BoSummary {
                status: RunStatus::Failed,
                error: Some(e.to_string()),
                n_evaluations: steps.len(),
                final_regret: steps.last().map(|s| s.simple_regret),
                best_x: None,
            }
        }
    };
    out.append(&BoLine::Summary(summary.clone()))?;
    Ok(BoRecord { seed, steps, summary })
}

fn continue_seed(
    config: &BoConfig,
    bench: &Benchmark,
    surrogate: &Surrogate,
    seed: u64,
    steps: &mut Vec<BoStep>,
    out: &mut JsonlWriter,
) -> Result<()> {
    let design = initial_design(bench, config.n_init, seed)?;
    let total = config.n_init + config.n_steps;
    while steps.len() < total {
        let step = steps.len() + 1;
        let clock = Instant::now();
        let (x, phase, sel, stdz) = if step <= config.n_init {
            (design[step - 1].clone(), Phase::Init, None, None)
        } else {
            let hx: Vec<Vec<f64>> = steps.iter().map(|s| s.x.clone()).collect();
            let hy: Vec<f64> = steps.iter().map(|s| s.y_observed).collect();
            let (x, sel, stdz) = propose(surrogate, bench, &hx, &hy, &config.acq, rng::derive_seed(seed, step as u64, rng::tag::ACQUISITION))?;
            (x, Phase::Acquire, Some(sel), Some(stdz))
        };
        let ev = bench.evaluate(&x, seed, step as u64)?;
        let prev = steps.last().map(|s| s.best_latent).unwrap_or(f64::INFINITY);
        let best_latent = prev.min(ev.latent);
        let simple_regret = bench.simple_regret(best_latent);
        if let Some(last) = steps.last() {
            if simple_regret > last.simple_regret {
                return Err(Error::contract("simple regret increased"));
            }
        }
        let record = BoStep {
            step,
            phase,
            x: ev.x,
            y_observed: ev.y,
            latent_f: ev.latent,
            best_latent,
            simple_regret,
            incumbent: sel.as_ref().and_then(|s| s.tau).zip(stdz).map(|(t, z)| z.invert(t)),
            acq_value: sel.and_then(|s| s.score),
            wall_ms: config.record_timing.then(|| clock.elapsed().as_secs_f64() * 1e3),
        };
        out.append(&BoLine::Step(record.clone()))?;
        steps.push(record);
    }
    Ok(())
}

/// Runs every seed of `config`; failed seeds are reported in their summaries.
pub fn run_bo(config: &BoConfig) -> Result<Vec<BoRecord>> {
    let bench = config.validate()?;
    let surrogate = Surrogate::load(&config.surrogate, &config.hyper_grid)?;
    if let Surrogate::Icl(params) = &surrogate {
        check_icl_dim(params, bench.dim())?;
    }
    std::fs::create_dir_all(config.method_dir())?;
    let records = crate::par::map(&config.seeds, |&seed| run_seed(config, &bench, &surrogate, seed));
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    write_summary(&config.method_dir().join("summary.csv"), &records)?;
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub status: RunStatus,
    pub n_evaluations: usize,
    pub final_regret: Option<f64>,
}

fn write_summary(path: &Path, records: &[BoRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(SummaryRow {
            seed: r.seed,
            status: r.summary.status,
            n_evaluations: r.summary.n_evaluations,
            final_regret: r.summary.final_regret,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acq::{AcqRule, Source};

    fn quick(dir: &Path, rule: AcqRule, n_steps: usize) -> BoConfig {
        BoConfig {
            benchmark: "branin".into(),
            acq: AcqSpec { sobol_count: 64, n_restarts: 2, refine_steps: 10, ..AcqSpec::new(rule, Source::Epistemic) },
            n_steps,
            n_init: 4,
            seeds: vec![0, 1],
            output_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_is_initial_design() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(dir.path(), AcqRule::LogEi, 0);
        let recs = run_bo(&cfg).unwrap();
        let bench = Benchmark::by_name("branin").unwrap();
        for r in &recs {
            assert_eq!(r.steps.len(), 4);
            assert!(r.steps.iter().all(|s| s.phase == Phase::Init));
            let design = initial_design(&bench, 4, r.seed).unwrap();
            assert_eq!(r.steps.iter().map(|s| s.x.clone()).collect::<Vec<_>>(), design);
        }
        assert!(cfg.method_dir().join("summary.csv").exists());
    }

    #[test]
    fn methods_share_the_initial_block() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_bo(&quick(dir.path(), AcqRule::LogEi, 2)).unwrap();
        let b = run_bo(&quick(dir.path(), AcqRule::Random, 2)).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.steps[..4], rb.steps[..4]);
            let ok = ra.steps.windows(2).all(|w| w[1].simple_regret <= w[0].simple_regret);
            assert!(ok && ra.summary.status == RunStatus::Ok);
        }
    }

    #[test]
    fn tuned_with_epistemic_fails_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BoConfig {
            surrogate: SurrogateSpec::TunedIcl { checkpoint: dir.path().join("missing.json") },
            ..quick(dir.path(), AcqRule::LogEi, 1)
        };
        assert!(matches!(run_bo(&cfg), Err(Error::Config(_))));
        assert!(!cfg.method_dir().exists());
        let dup = BoConfig { seeds: vec![1, 1], ..quick(dir.path(), AcqRule::Ei, 1) };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn failed_seed_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        // A grid without usable hyperparameters makes every GP fit fail.
        let cfg = BoConfig {
            hyper_grid: HyperGrid { lengthscales: vec![-1.0], ..HyperGrid::default() },
            ..quick(dir.path(), AcqRule::LogEi, 2)
        };
        let recs = run_bo(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.summary.status == RunStatus::Failed && r.steps.len() == 4));
    }
}
