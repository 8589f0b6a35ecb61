//! Noise-free latent function families.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentFamily {
    Gp,
    MlpScm,
    TreeScm,
    /// The enumerable two-hypothesis prior used for consistency checks.
    TwoHypothesis,
}

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Random-Fourier-feature draw from an RBF Gaussian-process prior.
#[derive(Clone, Debug)]
pub struct RffGp {
    lengthscale: f64,
    amplitude: f64,
    /// `M × d` frequencies.
    omega: Vec<Vec<f64>>,
    phase: Vec<f64>,
    weight: Vec<f64>,
}

impl RffGp {
    pub fn sample(d: usize, lengthscale: f64, amplitude: f64, n_features: usize, r: &mut impl Rng) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::domain("RFF needs at least one feature"));
        }
        if !(lengthscale > 0.0 && amplitude > 0.0) {
            return Err(Error::domain("RFF lengthscale and amplitude must be positive"));
        }
        let mut omega = Vec::with_capacity(n_features);
        let mut phase = Vec::with_capacity(n_features);
        let mut weight = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            omega.push((0..d).map(|_| normal(r)).collect());
            phase.push(r.random_range(0.0..2.0 * PI));
            weight.push(normal(r));
        }
        Ok(Self { lengthscale, amplitude, omega, phase, weight })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = self.weight.len() as f64;
        let s: f64 = self
            .omega
            .iter()
            .zip(&self.phase)
            .zip(&self.weight)
            .map(|((om, b), w)| {
                let proj: f64 = om.iter().zip(x).map(|(o, xi)| o * xi).sum();
                w * (proj / self.lengthscale + b).cos()
            })
            .sum();
        self.amplitude * (2.0 / m).sqrt() * s
    }
}

/// `f(x) = A √(2/M) Σ_m w_m cos(ω_mᵀx/ℓ + b_m)` evaluated at every row of `x`.
pub fn sample_latent_rff_gp(
    x: &[Vec<f64>],
    lengthscale: f64,
    amplitude: f64,
    n_features: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let d = x.first().map_or(1, Vec::len);
    let mut r = rng::stream(seed, 0, rng::tag::LATENT);
    let gp = RffGp::sample(d, lengthscale, amplitude, n_features, &mut r)?;
    Ok(x.iter().map(|row| gp.eval(row)).collect())
}

/// Hidden node of the MLP structural causal model: a one-hidden-layer tanh
/// perceptron of its parent nodes.
#[derive(Clone, Debug)]
struct ScmNode {
    parents: Vec<usize>,
    /// `width × parents` input weights.
    w_in: Vec<Vec<f64>>,
    b_in: Vec<f64>,
    w_out: Vec<f64>,
}

/// Random DAG over `d` input nodes and a few hidden perceptron nodes, read out
/// linearly. No noise is injected anywhere.
#[derive(Clone, Debug)]
pub struct MlpScm {
    d: usize,
    hidden: Vec<ScmNode>,
    readout: Vec<f64>,
    bias: f64,
}

impl MlpScm {
    pub fn sample(d: usize, r: &mut impl Rng) -> Self {
        let h = r.random_range(1..=4);
        Self::sample_with_hidden(d, h, r)
    }

    pub fn sample_with_hidden(d: usize, n_hidden: usize, r: &mut impl Rng) -> Self {
        let mut hidden = Vec::with_capacity(n_hidden);
        for t in 0..n_hidden {
            let available = d + t;
            let mut parents: Vec<usize> = (0..available).filter(|_| r.random_bool(0.5)).collect();
            if parents.is_empty() {
                parents.push(r.random_range(0..available));
            }
            let width = r.random_range(4..=16);
            let scale = 2.0 / (parents.len() as f64).sqrt();
            let w_in = (0..width)
                .map(|_| parents.iter().map(|_| scale * normal(r)).collect())
                .collect();
            let b_in = (0..width).map(|_| 0.5 * normal(r)).collect();
            let w_out = (0..width).map(|_| normal(r) / (width as f64).sqrt()).collect();
            hidden.push(ScmNode { parents, w_in, b_in, w_out });
        }
        let readout = (0..d + n_hidden).map(|_| normal(r)).collect();
        Self { d, hidden, readout, bias: normal(r) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        // Inputs live in the unit box; center them before propagation.
        let mut nodes: Vec<f64> = x.iter().take(self.d).map(|v| 2.0 * v - 1.0).collect();
        for node in &self.hidden {
            let v: f64 = node
                .w_in
                .iter()
                .zip(&node.b_in)
                .zip(&node.w_out)
                .map(|((w, b), out)| {
                    let pre: f64 = w.iter().zip(&node.parents).map(|(wi, p)| wi * nodes[*p]).sum::<f64>() + b;
                    out * pre.tanh()
                })
                .sum();
            nodes.push(v);
        }
        self.bias + self.readout.iter().zip(&nodes).map(|(a, v)| a * v).sum::<f64>()
    }
}

pub fn sample_latent_mlp_scm(x: &[Vec<f64>], seed: u64) -> Vec<f64> {
    let d = x.first().map_or(1, Vec::len);
    let mut r = rng::stream(seed, 0, rng::tag::LATENT);
    let scm = MlpScm::sample(d, &mut r);
    x.iter().map(|row| scm.eval(row)).collect()
}

/// Random axis-aligned decision tree with Gaussian leaf values.
#[derive(Clone, Debug)]
pub struct TreeScm {
    depth: usize,
    /// Internal nodes in heap order: `(coordinate, threshold)`.
    splits: Vec<(usize, f64)>,
    leaves: Vec<f64>,
}

impl TreeScm {
    /// Tree of depth `Unif{2..5}` with thresholds inside the observed range of `x`.
    pub fn sample(x: &[Vec<f64>], r: &mut impl Rng) -> Self {
        let depth = r.random_range(2..=5);
        Self::sample_with_depth(x, depth, r)
    }

    pub fn sample_with_depth(x: &[Vec<f64>], depth: usize, r: &mut impl Rng) -> Self {
        let d = x.first().map_or(1, Vec::len);
        let ranges: Vec<(f64, f64)> = (0..d)
            .map(|c| {
                x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| (lo.min(row[c]), hi.max(row[c])))
            })
            .collect();
        let n_internal = (1usize << depth) - 1;
        let splits = (0..n_internal)
            .map(|_| {
                let c = r.random_range(0..d);
                let (lo, hi) = ranges[c];
                let t = if hi > lo { r.random_range(lo..hi) } else { lo };
                (c, t)
            })
            .collect();
        let leaves = (0..1usize << depth).map(|_| normal(r)).collect();
        Self { depth, splits, leaves }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        for _ in 0..self.depth {
            let (c, t) = self.splits[node];
            node = 2 * node + if x[c] < t { 1 } else { 2 };
        }
        self.leaves[node - self.splits.len()]
    }
}

pub fn sample_latent_tree_scm(x: &[Vec<f64>], seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0, rng::tag::LATENT);
    let tree = TreeScm::sample(x, &mut r);
    x.iter().map(|row| tree.eval(row)).collect()
}

/// Draws a latent family according to the mixture weights and evaluates it.
pub(crate) fn sample_family_values(family: LatentFamily, x: &[Vec<f64>], r: &mut Stream) -> Vec<f64> {
    let d = x.first().map_or(1, Vec::len);
    match family {
        LatentFamily::Gp => {
            let ls = (r.random_range(0.15f64.ln()..0.8f64.ln())).exp() * (d as f64).sqrt();
            let gp = RffGp::sample(d, ls, 1.0, 256, r).expect("valid RFF parameters");
            x.iter().map(|row| gp.eval(row)).collect()
        }
        LatentFamily::MlpScm => {
            let scm = MlpScm::sample(d, r);
            x.iter().map(|row| scm.eval(row)).collect()
        }
        LatentFamily::TreeScm => {
            let tree = TreeScm::sample(x, r);
            x.iter().map(|row| tree.eval(row)).collect()
        }
        LatentFamily::TwoHypothesis => unreachable!("two-hypothesis tasks have their own sampler"),
    }
}
