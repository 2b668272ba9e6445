//! Digamma and log-gamma via upward recurrence and asymptotic series.
//!
//! Both functions shift the argument up to `x >= 6` with the recurrences
//! `psi(x) = psi(x + 1) - 1/x` and `lgamma(x) = lgamma(x + 1) - ln x`, then
//! evaluate the Stirling-type expansion in `1/x^2`. Accuracy is better than
//! `1e-12` absolute for `x >= 1e-3`.

use crate::error::{domain, Result};

const SHIFT: f64 = 6.0;

/// `B_{2k} / (2k)` for k = 1..7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// `B_{2k} / (2k (2k - 1))` for k = 1..7.
const LGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Digamma for `x > 0`. Panics in debug builds on non-positive input; use
/// [`digamma_checked`] at API boundaries.
pub fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma domain: {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_SERIES {
        series += c * pow;
        pow *= inv2;
    }
    acc + x.ln() - 0.5 / x - series
}

pub fn digamma_checked(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma(x))
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "log_gamma domain: {x}");
    let mut x = x;
    let mut prod = 1.0;
    while x < SHIFT {
        prod *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in LGAMMA_SERIES {
        series += c * pow;
        pow *= inv2;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series - prod.ln()
}

pub fn log_gamma_checked(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma(x))
}
