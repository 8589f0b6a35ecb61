//! Input-dependent observation-noise fields.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Noise standard deviation as a smooth function of one input coordinate:
///
/// `σ(x) = s0 · max(floor_frac, w_sig·sigmoid(α(x_c − t)) + w_bump·exp(−(x_c − μ)²/(2ρ²))
///          + w_sin·(1 + sin(ω x_c + φ))/2 + w_floor)`, clipped below at `noise_floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    pub base_sd: f64,
    pub coord: usize,
    pub w_sigmoid: f64,
    pub slope: f64,
    pub shift: f64,
    pub w_bump: f64,
    pub bump_center: f64,
    pub bump_width: f64,
    pub w_sin: f64,
    pub freq: f64,
    pub phase: f64,
    pub w_floor: f64,
    pub floor_frac: f64,
    pub noise_floor: f64,
}

impl NoiseField {
    /// Homoscedastic field: `σ(x) = base_sd`.
    pub fn constant(base_sd: f64, noise_floor: f64) -> Self {
        Self {
            base_sd,
            coord: 0,
            w_sigmoid: 0.0,
            slope: 0.0,
            shift: 0.0,
            w_bump: 0.0,
            bump_center: 0.0,
            bump_width: 1.0,
            w_sin: 0.0,
            freq: 0.0,
            phase: 0.0,
            w_floor: 1.0,
            floor_frac: 0.0,
            noise_floor,
        }
    }

    /// Random heteroscedastic field over `d` (standardized) input coordinates.
    ///
    /// Shape ranges keep `σ/s0` within `[floor_frac, ~3.3]` on standardized inputs.
    pub fn sample(rng: &mut impl Rng, d: usize, base_sd: f64, floor_frac: f64, noise_floor: f64) -> Self {
        let coord = rng.random_range(0..d);
        let mut include = [rng.random_bool(0.6), rng.random_bool(0.6), rng.random_bool(0.6)];
        if !include.iter().any(|b| *b) {
            include[rng.random_range(0..3)] = true;
        }
        let mut weights = [0.0; 3];
        for (w, on) in weights.iter_mut().zip(include) {
            if on {
                *w = rng.random_range(0.0..1.0);
            }
        }
        let [w_sigmoid, w_bump, w_sin] = weights;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Self {
            base_sd,
            coord,
            w_sigmoid,
            slope: sign * rng.random_range(1.0..4.0),
            shift: rng.random_range(-1.0..1.0),
            w_bump,
            bump_center: rng.random_range(-1.5..1.5),
            bump_width: rng.random_range(0.25..1.0),
            w_sin,
            freq: rng.random_range(0.5..3.0),
            phase: rng.random_range(0.0..2.0 * PI),
            w_floor: rng.random_range(0.1..0.3),
            floor_frac,
            noise_floor,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.w_sigmoid == 0.0 && self.w_bump == 0.0 && self.w_sin == 0.0
    }

    /// Modulation factor `σ(x)/s0` before the absolute clip.
    pub fn modulation(&self, xc: f64) -> f64 {
        let sig = 1.0 / (1.0 + (-self.slope * (xc - self.shift)).exp());
        let dz = (xc - self.bump_center) / self.bump_width;
        let bump = (-0.5 * dz * dz).exp();
        let wave = 0.5 * (1.0 + (self.freq * xc + self.phase).sin());
        let m = self.w_sigmoid * sig + self.w_bump * bump + self.w_sin * wave + self.w_floor;
        m.max(self.floor_frac)
    }

    /// Noise standard deviation at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_floor(x, self.noise_floor)
    }

    pub(crate) fn eval_with_floor(&self, x: &[f64], floor: f64) -> f64 {
        let xc = x.get(self.coord).copied().unwrap_or(0.0);
        (self.base_sd * self.modulation(xc)).max(floor)
    }
}
