//! Synthetic heteroscedastic regression tasks sampled online.

mod latent;
mod noise;
mod toy;

pub use latent::{
    sample_latent_mlp_scm, sample_latent_rff_gp, sample_latent_tree_scm, LatentFamily, MlpScm, RffGp, TreeScm,
};
pub use noise::NoiseField;
pub use toy::TwoHypothesisPrior;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng;

/// Evaluates a noise field at `x`.
pub fn eval_noise_field(field: &NoiseField, x: &[f64]) -> f64 {
    field.eval(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskPriorConfig {
    /// Inclusive range of input dimensions.
    pub dim_range: (usize, usize),
    /// Inclusive range of task lengths (context + queries).
    pub seq_len_range: (usize, usize),
    pub n_queries: usize,
    pub p_gp: f64,
    pub p_mlp_given_scm: f64,
    pub s0_range: (f64, f64),
    pub p_hetero: f64,
    /// Lower bound on the noise sd in normalized target units.
    pub noise_floor: f64,
    /// Lower bound on the modulation factor `σ/s0`.
    pub floor_frac: f64,
}

impl Default for TaskPriorConfig {
    fn default() -> Self {
        Self {
            dim_range: (1, 16),
            seq_len_range: (25, 256),
            n_queries: 24,
            p_gp: 0.2,
            p_mlp_given_scm: 0.7,
            s0_range: (0.03, 0.12),
            p_hetero: 0.8,
            noise_floor: 0.005,
            floor_frac: 0.1,
        }
    }
}

impl TaskPriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_gp", self.p_gp), ("p_mlp_given_scm", self.p_mlp_given_scm), ("p_hetero", self.p_hetero)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("{name} = {p} is not a probability")));
            }
        }
        let (d_lo, d_hi) = self.dim_range;
        if d_lo == 0 || d_lo > d_hi {
            return Err(Error::domain(format!("invalid dim_range {:?}", self.dim_range)));
        }
        let (n_lo, n_hi) = self.seq_len_range;
        if n_lo > n_hi {
            return Err(Error::domain(format!("invalid seq_len_range {:?}", self.seq_len_range)));
        }
        if self.n_queries == 0 || self.n_queries >= n_lo {
            return Err(Error::domain(format!(
                "n_queries {} leaves no context points at seq_len {}",
                self.n_queries, n_lo
            )));
        }
        let (s_lo, s_hi) = self.s0_range;
        if !(s_lo > 0.0 && s_lo <= s_hi && s_hi.is_finite()) {
            return Err(Error::domain(format!("invalid s0_range {:?}", self.s0_range)));
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::domain("noise_floor must be positive"));
        }
        if !(0.0..1.0).contains(&self.floor_frac) {
            return Err(Error::domain("floor_frac must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Unconditional latent-family probabilities `(GP, MLP-SCM, Tree-SCM)`.
    pub fn family_probs(&self) -> [f64; 3] {
        let scm = 1.0 - self.p_gp;
        [self.p_gp, scm * self.p_mlp_given_scm, scm * (1.0 - self.p_mlp_given_scm)]
    }
}

/// One regression task. Context rows come first, queries last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    #[serde(rename = "seed")]
    pub rng_seed: u64,
    pub d: usize,
    pub n: usize,
    pub n_context: usize,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub y: Vec<f64>,
    pub hetero_flag: bool,
    pub family: LatentFamily,
}

impl SyntheticTask {
    pub fn n_queries(&self) -> usize {
        self.n - self.n_context
    }

    pub fn context_x(&self) -> &[Vec<f64>] {
        &self.x[..self.n_context]
    }

    pub fn context_y(&self) -> &[f64] {
        &self.y[..self.n_context]
    }

    pub fn query_x(&self) -> &[Vec<f64>] {
        &self.x[self.n_context..]
    }

    pub fn query_range(&self) -> std::ops::Range<usize> {
        self.n_context..self.n
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn draw_family(config: &TaskPriorConfig, r: &mut impl Rng) -> LatentFamily {
    if r.random_bool(config.p_gp) {
        LatentFamily::Gp
    } else if r.random_bool(config.p_mlp_given_scm) {
        LatentFamily::MlpScm
    } else {
        LatentFamily::TreeScm
    }
}

/// Samples one task. Every random choice is keyed by `seed` and a stream tag,
/// so the result is reproducible and independent of other tasks.
pub fn sample_task(config: &TaskPriorConfig, seed: u64) -> Result<SyntheticTask> {
    config.validate()?;
    let mut task_rng = rng::stream(seed, 0, rng::tag::TASK);
    let d = task_rng.random_range(config.dim_range.0..=config.dim_range.1);
    let n = task_rng.random_range(config.seq_len_range.0..=config.seq_len_range.1);
    let family = draw_family(config, &mut task_rng);
    let raw_x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| task_rng.random::<f64>()).collect()).collect();
    let s0 = task_rng.random_range(config.s0_range.0..=config.s0_range.1);
    let hetero = task_rng.random_bool(config.p_hetero);

    let mut latent_rng = rng::stream(seed, 0, rng::tag::LATENT);
    let mut f = latent::sample_family_values(family, &raw_x, &mut latent_rng);
    let (fm, fs) = mean_std(&f);
    let fs = if fs > 1e-12 { fs } else { 1.0 };
    f.iter_mut().for_each(|v| *v = (*v - fm) / fs);

    // Features are z-scored with the statistics of all n points.
    let mut x = raw_x;
    for c in 0..d {
        let col: Vec<f64> = x.iter().map(|row| row[c]).collect();
        let (m, s) = mean_std(&col);
        let s = if s > 1e-12 { s } else { 1.0 };
        x.iter_mut().for_each(|row| row[c] = (row[c] - m) / s);
    }

    let field = if hetero {
        let mut field_rng = rng::stream(seed, 0, rng::tag::NOISE_FIELD);
        NoiseField::sample(&mut field_rng, d, s0, config.floor_frac, config.noise_floor)
    } else {
        NoiseField::constant(s0, config.noise_floor)
    };
    let mut noise_rng = rng::stream(seed, 0, rng::tag::OBS_NOISE);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut noise_rng)).collect();
    let n_context = n - config.n_queries;

    // The clip is stated in normalized units but the normalizer depends on y.
    // Raise the raw clip until the normalized floor holds; this converges in a
    // couple of rounds because the context std barely moves.
    let mut clip = config.noise_floor;
    let mut attempt = 0;
    let (sd, y, ym, ys) = loop {
        let sd: Vec<f64> = x.iter().map(|row| field.eval_with_floor(row, clip)).collect();
        let y: Vec<f64> = f.iter().zip(&sd).zip(&z).map(|((fi, s), zi)| fi + s * zi).collect();
        // A single context point fixes the shift but not the scale.
        let (ym, ys) = match mean_std(&y[..n_context]) {
            (m, _) if n_context == 1 => (m, 1.0),
            ms => ms,
        };
        if !(ys > 0.0 && ys.is_finite()) {
            return Err(Error::numeric(format!("degenerate context targets for task seed {seed}")));
        }
        attempt += 1;
        let needed = config.noise_floor * ys;
        if clip >= needed || sd.iter().all(|s| *s >= needed) || attempt >= 32 {
            break (sd, y, ym, ys);
        }
        clip = needed * (1.0 + 1e-9);
    };

    let y: Vec<f64> = y.iter().map(|v| (v - ym) / ys).collect();
    let f: Vec<f64> = f.iter().map(|v| (v - ym) / ys).collect();
    let floor2 = config.noise_floor * config.noise_floor;
    let sigma2: Vec<f64> = sd.iter().map(|s| (s / ys) * (s / ys)).map(|v| v.max(floor2)).collect();
    Ok(SyntheticTask {
        rng_seed: seed,
        d,
        n,
        n_context,
        x,
        f,
        sigma2,
        y,
        hetero_flag: !field.is_constant(),
        family,
    })
}

/// Writes `count` tasks, seeds `first_seed..`, one JSON object per line.
pub fn write_tasks_jsonl(config: &TaskPriorConfig, first_seed: u64, count: usize, out: &mut impl Write) -> Result<()> {
    config.validate()?;
    for i in 0..count as u64 {
        let task = sample_task(config, first_seed + i)?;
        serde_json::to_writer(&mut *out, &task)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks_jsonl(input: impl BufRead) -> Result<Vec<SyntheticTask>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
