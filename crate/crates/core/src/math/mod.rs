//! Scalar kernels shared by inference and post-processing.

mod dist;
mod special;

pub use dist::{
    gamma_entropy, gamma_logpdf, mvn_entropy, mvn_logpdf, normal_entropy, normal_logpdf,
    poisson_logpmf, sample_gamma, sample_mvn, sample_normal_reparam, GammaParams, MvnParams,
    NormalParams,
};
pub(crate) use dist::{sample_gamma_raw, LN_2PI};
pub use special::{digamma, digamma_checked, log_gamma, log_gamma_checked};

use crate::error::{domain, Error, Result};

/// `E[exp(X Y)]` for independent normals X = eta, Y = position.
///
/// Finite only while `eta.var * pos.var < 1`.
pub fn expected_ideological_term(eta: &NormalParams, pos: &NormalParams) -> Result<f64> {
    if eta.var * pos.var >= 1.0 {
        return Err(domain(format!(
            "E[exp(XY)] is infinite: var product {} >= 1",
            eta.var * pos.var
        )));
    }
    Ok(expected_factor(eta.loc, eta.var, pos.loc, pos.var))
}

/// Unchecked form of [`expected_ideological_term`] for inner loops.
#[inline]
pub fn expected_factor(mx: f64, vx: f64, my: f64, vy: f64) -> f64 {
    let denom = 1.0 - vx * vy;
    let num = mx * mx * vy + 2.0 * mx * my + my * my * vx;
    (0.5 * num / denom).exp() / denom.sqrt()
}

/// `exp(E[X] E[Y])`, the geometric-mean replacement of the expectation.
pub fn geometric_ideological_term(eta: &NormalParams, pos: &NormalParams) -> f64 {
    (eta.loc * pos.loc).exp()
}

/// Robbins-Monro step size `(t + tau)^(-kappa)`.
pub fn step_size(t: u64, tau: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.5 && kappa <= 1.0) {
        return Err(Error::Config(format!("kappa must lie in (0.5, 1], got {kappa}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
    }
    if t == 0 {
        return Err(Error::Config("step counter starts at 1".into()));
    }
    Ok((t as f64 + tau).powf(-kappa))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(sigmoid(x))` without underflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Pearson correlation; `None` when either side has zero variance or the
/// lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
