//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in the lower tail.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `Φ(hi) - Φ(lo)` evaluated in whichever tail avoids cancellation.
#[inline]
pub fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        norm_sf(lo) - norm_sf(hi)
    } else if hi <= 0.0 {
        norm_cdf(hi) - norm_cdf(lo)
    } else {
        1.0 - norm_cdf(lo) - norm_sf(hi)
    }
}

/// Inverse standard normal CDF (one Newton polish on the library estimate).
pub fn norm_quantile(p: f64) -> f64 {
    let x = Normal::standard().inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    let pdf = norm_pdf(x);
    if pdf > 0.0 {
        x - (norm_cdf(x) - p) / pdf
    } else {
        x
    }
}
