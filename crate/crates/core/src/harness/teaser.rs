//! The one-dimensional heteroscedastic teaser: epistemic versus total LCB.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::acq::{select_point, AcqRule, AcqSpec, Source};
use crate::bench::{make_teaser_task, teaser_latent, teaser_noise_sd, Benchmark, TEASER_GAP};
use crate::error::Result;
use crate::gp::{gp_fit, gp_fit_hypers, GpPosterior, GpState, HyperChoice, HyperGrid, NoiseSpec, QueryNoise};
use crate::predict::{Posterior, Prediction};
use crate::rng;

pub const TEASER_STEPS: usize = 20;
/// Resolution of the plot-ready curve.
pub const CURVE_POINTS: usize = 201;

pub fn in_gap(x: f64) -> bool {
    (TEASER_GAP.0..=TEASER_GAP.1).contains(&x)
}

pub fn in_high_noise(x: f64) -> bool {
    x > TEASER_GAP.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaserRun {
    pub source: Source,
    pub selections: Vec<f64>,
    pub observations: Vec<f64>,
    /// Share of selections inside the unsupported interval.
    pub gap_fraction: f64,
    pub high_noise_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaserReport {
    pub seed: u64,
    pub epistemic: TeaserRun,
    pub total: TeaserRun,
}

fn noise_var(x: &[f64]) -> f64 {
    teaser_noise_sd(x[0]).powi(2)
}

fn fit(x: &[Vec<f64>], y: &[f64], hypers: &HyperChoice) -> Result<GpState> {
    let noise = x.iter().map(|v| noise_var(v)).collect();
    gp_fit(x, y, hypers.kernel, NoiseSpec::Known(noise), hypers.kernel.default_jitter())
}

fn posterior(state: GpState) -> GpPosterior {
    GpPosterior::new(state, QueryNoise::Field(Arc::new(noise_var)))
}

fn run(seed: u64, source: Source, ctx_x: &[Vec<f64>], ctx_y: &[f64], hypers: &HyperChoice) -> Result<TeaserRun> {
    let bench = Benchmark::by_name("teaser1d")?;
    let spec = AcqSpec::new(AcqRule::Lcb, source);
    let mut x = ctx_x.to_vec();
    let mut y = ctx_y.to_vec();
    let mut selections = Vec::with_capacity(TEASER_STEPS);
    let mut observations = Vec::with_capacity(TEASER_STEPS);
    for step in 1..=TEASER_STEPS {
        let post = posterior(fit(&x, &y, hypers)?);
        let acq_seed = rng::derive_seed(seed, step as u64, rng::tag::ACQUISITION);
        let sel = select_point(&post, &x, &bench.bounds, &spec, acq_seed)?;
        let ev = bench.evaluate(&sel.x, seed, step as u64)?;
        selections.push(ev.x[0]);
        observations.push(ev.y);
        x.push(ev.x);
        y.push(ev.y);
    }
    let gap = selections.iter().filter(|&&s| in_gap(s)).count();
    Ok(TeaserRun {
        source,
        gap_fraction: gap as f64 / TEASER_STEPS as f64,
        high_noise_count: selections.iter().filter(|&&s| in_high_noise(s)).count(),
        selections,
        observations,
    })
}

/// Twenty LCB selections from the same context under each variance source.
/// With `out_dir`, writes `curve.csv` and `selections.csv` there.
pub fn teaser_demo(seed: u64, out_dir: Option<&Path>) -> Result<TeaserReport> {
    let task = make_teaser_task(seed);
    let ctx_x: Vec<Vec<f64>> = task.x.iter().map(|&v| vec![v]).collect();
    let noise: Vec<f64> = ctx_x.iter().map(|v| noise_var(v)).collect();
    let hypers = gp_fit_hypers(&ctx_x, &task.y, &HyperGrid::default(), Some(&noise))?;
    let report = TeaserReport {
        seed,
        epistemic: run(seed, Source::Epistemic, &ctx_x, &task.y, &hypers)?,
        total: run(seed, Source::Total, &ctx_x, &task.y, &hypers)?,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_curve(&dir.join("curve.csv"), &posterior(fit(&ctx_x, &task.y, &hypers)?))?;
        write_selections(&dir.join("selections.csv"), &report)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct CurveRow {
    x: f64,
    latent: f64,
    mean: f64,
    epistemic_sd: f64,
    noise_sd: f64,
    total_sd: f64,
}

fn write_curve(path: &Path, post: &dyn Posterior) -> Result<()> {
    let xs: Vec<Vec<f64>> = (0..CURVE_POINTS).map(|i| vec![i as f64 / (CURVE_POINTS - 1) as f64]).collect();
    let preds = post.predict(&xs)?;
    let mut w = csv::Writer::from_path(path)?;
    for (x, p) in xs.iter().zip(&preds) {
        let Prediction::Gaussian(m) = p else { unreachable!("GP predictions are Gaussian") };
        w.serialize(CurveRow {
            x: x[0],
            latent: teaser_latent(x[0]),
            mean: m.mu_f,
            epistemic_sd: m.v_epi.sqrt(),
            noise_sd: m.noise_var.sqrt(),
            total_sd: m.v_tot.sqrt(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SelectionRow {
    source: Source,
    order: usize,
    x: f64,
    y: f64,
    latent: f64,
}

fn write_selections(path: &Path, report: &TeaserReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for run in [&report.epistemic, &report.total] {
        for (i, (&x, &y)) in run.selections.iter().zip(&run.observations).enumerate() {
            w.serialize(SelectionRow { source: run.source, order: i + 1, x, y, latent: teaser_latent(x) })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = teaser_demo(5, None).unwrap();
        let b = teaser_demo(5, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epistemic.selections.len(), TEASER_STEPS);
    }

    #[test]
    fn writes_plot_tables() {
        let dir = tempfile::tempdir().unwrap();
        teaser_demo(1, Some(dir.path())).unwrap();
        let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), CURVE_POINTS + 1);
        let sel = std::fs::read_to_string(dir.path().join("selections.csv")).unwrap();
        assert_eq!(sel.lines().count(), 2 * TEASER_STEPS + 1);
    }
}
