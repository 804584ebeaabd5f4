//! Scalar standard-normal primitives used by every estimator.
//!
//! The CDF goes through the complementary error function so that both tails keep
//! full relative precision; `log_cdf` switches to an asymptotic series only where
//! `erfc` would underflow.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this point `erfc(-z/sqrt 2)` is within a few decades of underflow.
const LOG_CDF_TAIL: f64 = -37.0;

#[inline]
pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub fn log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Φ(z).
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// 1 − Φ(z) without cancellation.
#[inline]
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// log Φ(z), accurate in the far left tail.
pub fn log_cdf(z: f64) -> f64 {
    if z > 5.0 {
        // Φ close to one: log1p keeps the tiny complement.
        return (-sf(z)).ln_1p();
    }
    if z >= LOG_CDF_TAIL {
        return cdf(z).ln();
    }
    log_pdf(z) - (-z).ln() + mills_series(z).ln()
}

/// φ(z)/Φ(z), the inverse Mills ratio evaluated stably for very negative `z`.
pub fn inv_mills(z: f64) -> f64 {
    if z >= LOG_CDF_TAIL {
        (log_pdf(z) - log_cdf(z)).exp()
    } else {
        -z / mills_series(z)
    }
}

/// Asymptotic factor Φ(z)·|z|/φ(z) = 1 − 1/z² + 3/z⁴ − … for z ≪ 0.
fn mills_series(z: f64) -> f64 {
    let x2 = 1.0 / (z * z);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        term *= -((2 * k - 1) as f64) * x2;
        sum += term;
    }
    sum
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0, 1)");
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    // One Halley step against the libm CDF.
    let e = if z < 0.0 { cdf(z) - p } else { (1.0 - p) - sf(z) };
    let u = e / pdf(z);
    if u.is_finite() {
        z - u / (1.0 + 0.5 * z * u)
    } else {
        z
    }
}
