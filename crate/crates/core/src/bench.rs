//! Synthetic objectives, the 1D teaser task, and active-learning pools.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::prior::{sample_task, TaskPriorConfig};
use crate::rng;

// Hartmann constants as tabulated in the Virtual Library of Simulation
// Experiments (Surjanovic & Bingham).
const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann_sum(x: &[f64]) -> f64 {
    (0..4)
        .map(|i| {
            let inner: f64 = x.iter().enumerate().map(|(j, xj)| HARTMANN_A[i][j] * (xj - HARTMANN_P[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum()
}

pub fn branin(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Four-dimensional Hartmann in the rescaled form of Picheny et al.
pub fn hartmann4(x: &[f64]) -> f64 {
    (1.1 - hartmann_sum(&x[..4])) / 0.839
}

pub fn hartmann6(x: &[f64]) -> f64 {
    -hartmann_sum(&x[..6])
}

/// Ackley with `a = 20, b = 0.2, c = 2π`; exactly zero at the origin.
pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    (20.0 - 20.0 * (-0.2 * sq).exp()) + (E - cs.exp())
}

/// Gap left without context in the teaser task.
pub const TEASER_GAP: (f64, f64) = (0.4, 0.6);
pub const TEASER_LOW_SD: f64 = 0.02;
pub const TEASER_HIGH_SD: f64 = 0.3;
pub const TEASER_CONTEXT: usize = 40;

/// Smooth latent on `[0, 1]` whose global minimum lies inside the gap; the
/// noisy zone to its right carries a shallower basin.
pub fn teaser_latent(x: f64) -> f64 {
    let bump = (-0.5 * ((x - 0.5) / 0.08).powi(2)).exp();
    let step = 1.0 / (1.0 + (-(x - 0.62) / 0.03).exp());
    0.3 * (3.0 * PI * x).cos() - 1.1 * bump - 0.4 * step
}

pub fn teaser_noise_sd(x: f64) -> f64 {
    if x > TEASER_GAP.1 {
        TEASER_HIGH_SD
    } else {
        TEASER_LOW_SD
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Branin,
    Hartmann4,
    Hartmann6,
    Ackley,
    Teaser,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    Homoscedastic(f64),
    /// The teaser task's piecewise-constant field.
    Teaser,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub objective: Objective,
    pub bounds: Vec<(f64, f64)>,
    pub optimum_value: f64,
    pub argmin: Vec<f64>,
    pub noise: NoiseModel,
    /// Coordinates rounded to integers before evaluation.
    pub integer_dims: Vec<usize>,
}

/// One evaluation: the noisy observation and the noiseless latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub y: f64,
    pub latent: f64,
    /// Set when `x` had to be clamped into the bounds.
    pub clamped: bool,
}

pub const BENCHMARK_NAMES: [&str; 6] = ["branin", "hartmann4", "hartmann6", "ackley", "ackley-noisy", "teaser1d"];

impl Benchmark {
    pub fn by_name(name: &str) -> Result<Self> {
        let b = |objective, bounds: Vec<(f64, f64)>, optimum_value, argmin: Vec<f64>, noise| Self {
            name: name.to_string(),
            objective,
            bounds,
            optimum_value,
            argmin,
            noise,
            integer_dims: Vec::new(),
        };
        Ok(match name {
            "branin" => b(Objective::Branin, vec![(-5.0, 10.0), (0.0, 15.0)], 0.397_887_357_729_738_16, vec![PI, 2.275], NoiseModel::None),
            "hartmann4" => b(
                Objective::Hartmann4,
                vec![(0.0, 1.0); 4],
                -3.134_494_141_222_4,
                vec![0.187_395_272_980_496_4, 0.194_151_527_402_669_9, 0.557_917_779_896_157, 0.264_779_625_445_673_7],
                NoiseModel::None,
            ),
            "hartmann6" => b(
                Objective::Hartmann6,
                vec![(0.0, 1.0); 6],
                -3.322_368_011_415_515,
                vec![
                    0.201_689_511_071_936_58,
                    0.150_010_687_756_591_5,
                    0.476_873_972_586_436_93,
                    0.275_332_431_141_733_8,
                    0.311_651_616_067_892_6,
                    0.657_300_532_781_609_3,
                ],
                NoiseModel::None,
            ),
            "ackley" => b(Objective::Ackley, vec![(-4.0, 4.0); 2], 0.0, vec![0.0, 0.0], NoiseModel::None),
            "ackley-noisy" => b(Objective::Ackley, vec![(-4.0, 4.0); 2], 0.0, vec![0.0, 0.0], NoiseModel::Homoscedastic(0.5)),
            "teaser1d" => {
                let (x, v) = teaser_minimum();
                b(Objective::Teaser, vec![(0.0, 1.0)], v, vec![x], NoiseModel::Teaser)
            }
            _ => {
                return Err(Error::config(format!(
                    "unknown benchmark {name:?}; expected one of {}",
                    BENCHMARK_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn latent(&self, x: &[f64]) -> f64 {
        match self.objective {
            Objective::Branin => branin(x),
            Objective::Hartmann4 => hartmann4(x),
            Objective::Hartmann6 => hartmann6(x),
            Objective::Ackley => ackley(x),
            Objective::Teaser => teaser_latent(x[0]),
        }
    }

    pub fn noise_sd(&self, x: &[f64]) -> f64 {
        match self.noise {
            NoiseModel::None => 0.0,
            NoiseModel::Homoscedastic(s) => s,
            NoiseModel::Teaser => teaser_noise_sd(x[0]),
        }
    }

    /// Clamps into bounds and rounds integer coordinates.
    pub fn project(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!("{} expects {} coordinates, got {}", self.name, self.dim(), x.len())));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::domain(format!("NaN coordinate in {x:?}")));
        }
        let mut clamped = false;
        let mut out: Vec<f64> = x
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                let c = v.clamp(lo, hi);
                clamped |= c != v;
                c
            })
            .collect();
        for &i in &self.integer_dims {
            out[i] = out[i].round().clamp(self.bounds[i].0, self.bounds[i].1);
        }
        Ok((out, clamped))
    }

    /// Latent value plus noise drawn from a stream keyed by `(seed, step)`.
    pub fn evaluate(&self, x: &[f64], seed: u64, step: u64) -> Result<Evaluation> {
        let (x, clamped) = self.project(x)?;
        if clamped {
            log::warn!("{}: query clamped into bounds", self.name);
        }
        let latent = self.latent(&x);
        let sd = self.noise_sd(&x);
        let y = if sd > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng::stream(seed, step, rng::tag::OBS_NOISE));
            latent + sd * z
        } else {
            latent
        };
        Ok(Evaluation { x, y, latent, clamped })
    }

    pub fn simple_regret(&self, best_latent: f64) -> f64 {
        (best_latent - self.optimum_value).max(0.0)
    }
}

/// Minimum of the teaser latent on a fine grid, polished by golden section.
fn teaser_minimum() -> (f64, f64) {
    let n = 10_000;
    let i = (0..=n)
        .min_by(|&a, &b| teaser_latent(a as f64 / n as f64).total_cmp(&teaser_latent(b as f64 / n as f64)))
        .unwrap();
    let (mut lo, mut hi) = (((i as f64 - 1.0) / n as f64).max(0.0), ((i as f64 + 1.0) / n as f64).min(1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if teaser_latent(a) < teaser_latent(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, teaser_latent(x))
}

/// Context set of the teaser task: `x` outside the gap, noisy observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaserTask {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub latent: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

pub fn make_teaser_task(seed: u64) -> TeaserTask {
    let mut r = rng::stream(seed, 0, rng::tag::TEASER);
    let mut x = Vec::with_capacity(TEASER_CONTEXT);
    while x.len() < TEASER_CONTEXT {
        let u: f64 = r.random_range(0.0..0.8);
        let v = if u < TEASER_GAP.0 { u } else { u + (TEASER_GAP.1 - TEASER_GAP.0) };
        if !(TEASER_GAP.0..=TEASER_GAP.1).contains(&v) {
            x.push(v);
        }
    }
    let latent: Vec<f64> = x.iter().map(|&v| teaser_latent(v)).collect();
    let noise_sd: Vec<f64> = x.iter().map(|&v| teaser_noise_sd(v)).collect();
    let y = latent
        .iter()
        .zip(&noise_sd)
        .map(|(f, s)| {
            let z: f64 = StandardNormal.sample(&mut r);
            f + s * z
        })
        .collect();
    TeaserTask { x, y, latent, noise_sd }
}

/// Labelled points of an active-learning split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelledSet {
    pub x: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlPool {
    pub pool: LabelledSet,
    pub test: LabelledSet,
}

/// Splits one large prior task into a pool and a disjoint test set.
pub fn make_al_pool(config: &TaskPriorConfig, n_pool: usize, n_test: usize, seed: u64) -> Result<AlPool> {
    if n_pool == 0 || n_test == 0 {
        return Err(Error::config("pool and test sizes must be at least 1"));
    }
    let n = n_pool + n_test;
    let cfg = TaskPriorConfig { seq_len_range: (n, n), n_queries: n_test, ..config.clone() };
    let task = sample_task(&cfg, rng::derive_seed(seed, 0, rng::tag::POOL))?;
    let take = |range: std::ops::Range<usize>| LabelledSet {
        x: task.x[range.clone()].to_vec(),
        f: task.f[range.clone()].to_vec(),
        sigma2: task.sigma2[range.clone()].to_vec(),
        y: task.y[range].to_vec(),
    };
    Ok(AlPool { pool: take(0..n_pool), test: take(n_pool..n) })
}
