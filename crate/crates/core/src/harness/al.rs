//! Pool-based active learning on synthetic prior tasks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsBundle};
use super::record::JsonlWriter;
use super::{check_seeds, default_output_root, default_seeds, method_label, RunStatus, Surrogate, SurrogateSpec};
use crate::acq::{select_from_pool, AcqSpec};
use crate::bench::{make_al_pool, AlPool};
use crate::error::{Error, Result};
use crate::gp::{gp_fit, gp_fit_hypers, GpPosterior, HyperChoice, HyperGrid, NoiseSpec, QueryNoise};
use crate::model::IclPosterior;
use crate::predict::Posterior;
use crate::prior::TaskPriorConfig;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    /// Name of the pool family; the first path component of the output.
    pub name: String,
    pub prior: TaskPriorConfig,
    pub n_init: usize,
    pub n_pool: usize,
    pub n_test: usize,
    pub n_acquisitions: usize,
    /// Test metrics every this many acquisitions, plus the final one.
    pub metric_every: usize,
    pub epig_targets: usize,
    pub surrogate: SurrogateSpec,
    pub acq: AcqSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub record_timing: bool,
    pub hyper_grid: HyperGrid,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            prior: TaskPriorConfig::default(),
            n_init: 64,
            n_pool: 1000,
            n_test: 500,
            n_acquisitions: 256,
            metric_every: 16,
            epig_targets: 512,
            surrogate: SurrogateSpec::default(),
            acq: AcqSpec::default(),
            seeds: default_seeds(),
            output_dir: default_output_root(),
            record_timing: false,
            hyper_grid: HyperGrid::default(),
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.acq.validate().map_err(|e| Error::config(e.to_string()))?;
        self.surrogate.check_pairing(&self.acq)?;
        check_seeds(&self.seeds)?;
        if self.n_init == 0 || self.n_test == 0 || self.metric_every == 0 {
            return Err(Error::config("n_init, n_test and metric_every must be positive"));
        }
        if self.n_init + self.n_acquisitions > self.n_pool {
            return Err(Error::config(format!(
                "pool of {} cannot supply {} warm-start labels plus {} acquisitions",
                self.n_pool, self.n_init, self.n_acquisitions
            )));
        }
        Ok(())
    }

    pub fn method(&self) -> String {
        method_label(&self.surrogate, &self.acq)
    }

    pub fn method_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name).join(self.method())
    }

    pub fn record_path(&self, seed: u64) -> PathBuf {
        self.method_dir().join(format!("{seed}.jsonl"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlStep {
    /// 1-based acquisition count.
    pub step: usize,
    pub pool_index: usize,
    pub x: Vec<f64>,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricsBundle>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlSummary {
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub n_acquired: usize,
    pub final_metrics: Option<MetricsBundle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlLine {
    WarmStart { indices: Vec<usize>, metrics: MetricsBundle },
    Step(AlStep),
    Summary(AlSummary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlRecord {
    pub seed: u64,
    pub warm_start: Vec<usize>,
    pub warm_metrics: Option<MetricsBundle>,
    pub steps: Vec<AlStep>,
    pub summary: AlSummary,
}

/// Warm-start pool indices; they depend on the seed and pool size only.
pub fn warm_start_indices(n_pool: usize, n_init: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, 0, rng::tag::WARM_START);
    rand::seq::index::sample(&mut r, n_pool, n_init).into_vec()
}

/// Exact-bit key of an input row.
fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// The surrogate conditioned on the labelled set. GP hyperparameters are fitted once on the warm start.
struct Conditioner<'a> {
    surrogate: &'a Surrogate,
    hypers: Option<HyperChoice>,
    /// True noise variance by input, for the known-noise oracle.
    noise: Arc<HashMap<Vec<u64>, f64>>,
}

impl<'a> Conditioner<'a> {
    fn new(surrogate: &'a Surrogate, data: &AlPool, warm: &[usize]) -> Result<Self> {
        let noise: HashMap<Vec<u64>, f64> = data
            .pool
            .x
            .iter()
            .zip(&data.pool.sigma2)
            .chain(data.test.x.iter().zip(&data.test.sigma2))
            .map(|(x, s)| (key(x), *s))
            .collect();
        let mut c = Self { surrogate, hypers: None, noise: Arc::new(noise) };
        if let Surrogate::Gp { known_noise, grid } = surrogate {
            let x: Vec<Vec<f64>> = warm.iter().map(|&i| data.pool.x[i].clone()).collect();
            let y: Vec<f64> = warm.iter().map(|&i| data.pool.y[i]).collect();
            let known = known_noise.then(|| c.noise_of(&x));
            c.hypers = Some(gp_fit_hypers(&x, &y, grid, known.as_deref())?);
        }
        Ok(c)
    }

    fn noise_of(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.noise.get(&key(x)).copied().unwrap_or(f64::NAN)).collect()
    }

    fn condition(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn Posterior>> {
        match self.surrogate {
            Surrogate::Gp { known_noise, .. } => {
                let h = self.hypers.expect("fitted at construction");
                let jitter = h.kernel.default_jitter();
                if *known_noise {
                    let state = gp_fit(x, y, h.kernel, NoiseSpec::Known(self.noise_of(x)), jitter)?;
                    let table = Arc::clone(&self.noise);
                    let field = move |q: &[f64]| table.get(&key(q)).copied().unwrap_or(f64::NAN);
                    Ok(Box::new(GpPosterior::new(state, QueryNoise::Field(Arc::new(field)))))
                } else {
                    let s2 = h.noise_var.expect("homoscedastic fit reports a noise level");
                    let state = gp_fit(x, y, h.kernel, NoiseSpec::Homoscedastic(s2), jitter)?;
                    Ok(Box::new(GpPosterior::new(state, QueryNoise::Constant(s2))))
                }
            }
            Surrogate::Icl(params) => {
                if x.first().is_some_and(|r| r.len() > params.spec.input_dim_max) {
                    return Err(Error::config("pool inputs are wider than the model accepts"));
                }
                Ok(Box::new(IclPosterior::new((**params).clone(), x.to_vec(), y.to_vec())?))
            }
        }
    }
}

fn test_metrics(post: &dyn Posterior, data: &AlPool) -> Result<MetricsBundle> {
    let preds = post.predict(&data.test.x)?;
    compute_metrics(&preds, &data.test.y, post.grid())
}

fn run_seed(config: &AlConfig, surrogate: &Surrogate, seed: u64) -> Result<AlRecord> {
    let path = config.record_path(seed);
    let (mut out, lines) = JsonlWriter::resume::<AlLine>(&path)?;
    let mut rec = AlRecord {
        seed,
        warm_start: warm_start_indices(config.n_pool, config.n_init, seed),
        warm_metrics: None,
        steps: Vec::new(),
        summary: AlSummary { status: RunStatus::Ok, error: None, n_acquired: 0, final_metrics: None },
    };
    for line in lines {
        match line {
            AlLine::WarmStart { indices, metrics } => {
                if indices != rec.warm_start {
                    return Err(Error::contract(format!("{}: warm start does not match the seed", path.display())));
                }
                rec.warm_metrics = Some(metrics);
            }
            AlLine::Step(s) => rec.steps.push(s),
            AlLine::Summary(s) => {
                rec.summary = s;
                return Ok(rec);
            }
        }
    }
    let result = continue_seed(config, surrogate, seed, &mut rec, &mut out);
    rec.summary = match result {
        Ok(final_metrics) => AlSummary { status: RunStatus::Ok, error: None, n_acquired: rec.steps.len(), final_metrics: Some(final_metrics) },
        Err(e) => {
            log::error!("{} seed {seed}: {e}", config.method());
            AlSummary { status: RunStatus::Failed, error: Some(e.to_string()), n_acquired: rec.steps.len(), final_metrics: None }
        }
    };
    out.append(&AlLine::Summary(rec.summary.clone()))?;
    Ok(rec)
}

fn continue_seed(config: &AlConfig, surrogate: &Surrogate, seed: u64, rec: &mut AlRecord, out: &mut JsonlWriter) -> Result<MetricsBundle> {
    let data = make_al_pool(&config.prior, config.n_pool, config.n_test, seed)?;
    let cond = Conditioner::new(surrogate, &data, &rec.warm_start)?;
    let mut labelled: Vec<usize> = rec.warm_start.clone();
    labelled.extend(rec.steps.iter().map(|s| s.pool_index));
    let mut taken = vec![false; config.n_pool];
    labelled.iter().for_each(|&i| taken[i] = true);
    let targets: Vec<Vec<f64>> = data.test.x.iter().take(config.epig_targets.max(1)).cloned().collect();

    let conditioned = |idx: &[usize]| -> Result<Box<dyn Posterior>> {
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| data.pool.x[i].clone()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data.pool.y[i]).collect();
        cond.condition(&x, &y)
    };

    let mut last_metrics = match &rec.warm_metrics {
        Some(m) => m.clone(),
        None => {
            let m = test_metrics(conditioned(&labelled)?.as_ref(), &data)?;
            out.append(&AlLine::WarmStart { indices: rec.warm_start.clone(), metrics: m.clone() })?;
            rec.warm_metrics = Some(m.clone());
            m
        }
    };
    if let Some(m) = rec.steps.iter().rev().find_map(|s| s.metrics.clone()) {
        last_metrics = m;
    }
    while rec.steps.len() < config.n_acquisitions {
        let step = rec.steps.len() + 1;
        let clock = Instant::now();
        let post = conditioned(&labelled)?;
        let free: Vec<usize> = (0..config.n_pool).filter(|&i| !taken[i]).collect();
        let cand: Vec<Vec<f64>> = free.iter().map(|&i| data.pool.x[i].clone()).collect();
        let pick = select_from_pool(
            post.as_ref(),
            &cand,
            &config.acq,
            Some(&targets),
            post.grid(),
            rng::derive_seed(seed, step as u64, rng::tag::ACQUISITION),
        )?;
        let idx = free[pick];
        taken[idx] = true;
        labelled.push(idx);
        let metrics = if step % config.metric_every == 0 || step == config.n_acquisitions {
            let m = test_metrics(conditioned(&labelled)?.as_ref(), &data)?;
            last_metrics = m.clone();
            Some(m)
        } else {
            None
        };
        let s = AlStep {
            step,
            pool_index: idx,
            x: data.pool.x[idx].clone(),
            y: data.pool.y[idx],
            metrics,
            wall_ms: config.record_timing.then(|| clock.elapsed().as_secs_f64() * 1e3),
        };
        out.append(&AlLine::Step(s.clone()))?;
        rec.steps.push(s);
    }
    Ok(last_metrics)
}

pub fn run_al(config: &AlConfig) -> Result<Vec<AlRecord>> {
    config.validate()?;
    let surrogate = Surrogate::load(&config.surrogate, &config.hyper_grid)?;
    if let Surrogate::Icl(params) = &surrogate {
        if config.prior.dim_range.1 > params.spec.input_dim_max {
            return Err(Error::config(format!(
                "tasks have up to {} inputs but the model accepts at most {}",
                config.prior.dim_range.1, params.spec.input_dim_max
            )));
        }
    }
    std::fs::create_dir_all(config.method_dir())?;
    let records = crate::par::map(&config.seeds, |&seed| run_seed(config, &surrogate, seed));
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    write_summary(&config.method_dir().join("summary.csv"), &records)?;
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AlSummaryRow {
    pub seed: u64,
    pub status: RunStatus,
    pub n_acquired: usize,
    pub rmse: Option<f64>,
    pub gaussian_nll: Option<f64>,
    pub crps: Option<f64>,
}

fn write_summary(path: &Path, records: &[AlRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let m = r.summary.final_metrics.as_ref();
        w.serialize(AlSummaryRow {
            seed: r.seed,
            status: r.summary.status,
            n_acquired: r.summary.n_acquired,
            rmse: m.map(|m| m.rmse),
            gaussian_nll: m.map(|m| m.gaussian_nll),
            crps: m.map(|m| m.crps),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acq::{AcqRule, Source};

    fn quick(dir: &Path, rule: AcqRule, n_acq: usize) -> AlConfig {
        AlConfig {
            prior: TaskPriorConfig { dim_range: (1, 2), ..Default::default() },
            n_init: 8,
            n_pool: 60,
            n_test: 30,
            n_acquisitions: n_acq,
            metric_every: 2,
            seeds: vec![3, 4],
            acq: AcqSpec::new(rule, Source::Epistemic),
            output_dir: dir.to_path_buf(),
            hyper_grid: HyperGrid { lengthscales: vec![0.3, 1.0, 3.0], amplitudes: vec![0.5, 1.0], noise_vars: vec![0.01, 0.1] },
            ..Default::default()
        }
    }

    #[test]
    fn warm_start_shared_across_methods() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_al(&quick(dir.path(), AcqRule::Var, 3)).unwrap();
        let b = run_al(&quick(dir.path(), AcqRule::Random, 3)).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.warm_start, rb.warm_start);
            assert_eq!(ra.warm_metrics, rb.warm_metrics);
            assert_eq!(ra.summary.status, RunStatus::Ok);
            let mut all = ra.warm_start.clone();
            all.extend(ra.steps.iter().map(|s| s.pool_index));
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 8 + 3);
        }
    }

    #[test]
    fn zero_acquisitions_keep_warm_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let recs = run_al(&quick(dir.path(), AcqRule::Var, 0)).unwrap();
        for r in recs {
            assert!(r.steps.is_empty());
            assert_eq!(r.summary.final_metrics, r.warm_metrics);
        }
    }

    #[test]
    fn pool_exhaustion_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick(dir.path(), AcqRule::Var, 60);
        assert!(matches!(run_al(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn every_rule_runs() {
        let dir = tempfile::tempdir().unwrap();
        for (rule, source) in [(AcqRule::Bald, Source::Epistemic), (AcqRule::Var, Source::Total)] {
            let cfg = AlConfig { acq: AcqSpec::new(rule, source), seeds: vec![1], ..quick(dir.path(), rule, 2) };
            let recs = run_al(&cfg).unwrap();
            assert_eq!(recs[0].summary.status, RunStatus::Ok, "{rule}: {:?}", recs[0].summary.error);
        }
        let epig = AlConfig { seeds: vec![1], ..quick(dir.path(), AcqRule::Epig, 2) };
        assert!(matches!(run_al(&epig), Err(Error::Config(_))));
    }

    #[test]
    fn icl_surrogate_runs_every_rule() {
        use crate::model::{Checkpoint, ModelParams, ModelSpec, TrainConfig};
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec { input_dim_max: 2, embed_dim: 8, n_heads: 2, depth: 1, k: 16, ..Default::default() };
        let params = ModelParams::init(&spec, 0).unwrap();
        let ckpt = dir.path().join("m.json");
        Checkpoint::new(&params, &TrainConfig::default(), 0, 0).save(&ckpt).unwrap();
        for rule in [AcqRule::Bald, AcqRule::Epig, AcqRule::Var] {
            let cfg = AlConfig {
                surrogate: SurrogateSpec::DecoupledIcl { checkpoint: ckpt.clone() },
                seeds: vec![2],
                epig_targets: 16,
                ..quick(dir.path(), rule, 2)
            };
            let recs = run_al(&cfg).unwrap();
            assert_eq!(recs[0].summary.status, RunStatus::Ok, "{rule}: {:?}", recs[0].summary.error);
            assert!(recs[0].summary.final_metrics.as_ref().unwrap().crps.is_finite());
        }
    }
}
