//! Parameter types for the three variational families plus their densities,
//! entropies and samplers.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::special::{digamma, log_gamma};
use crate::error::{domain, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gamma distribution in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(domain(format!("gamma params must be positive, got ({shape}, {rate})")));
        }
        Ok(Self { shape, rate })
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// `E[ln X] = psi(shape) - ln(rate)`.
    #[inline]
    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        gamma_entropy(self.shape, self.rate)
    }
}

/// Univariate normal in location/variance form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub loc: f64,
    pub var: f64,
}

impl NormalParams {
    pub fn new(loc: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() || !loc.is_finite() {
            return Err(domain(format!("normal params invalid: loc {loc}, var {var}")));
        }
        Ok(Self { loc, var })
    }

    pub fn entropy(&self) -> f64 {
        normal_entropy(self.var)
    }
}

/// Multivariate normal parameterized by a lower-triangular Cholesky factor of
/// the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnParams {
    pub loc: DVector<f64>,
    pub chol: DMatrix<f64>,
}

impl MvnParams {
    pub fn new(loc: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let l = loc.len();
        if chol.nrows() != l || chol.ncols() != l {
            return Err(domain(format!("cholesky must be {l}x{l}")));
        }
        for i in 0..l {
            if !(chol[(i, i)] > 0.0) {
                return Err(domain(format!("cholesky diagonal {i} not positive")));
            }
            for j in (i + 1)..l {
                if chol[(i, j)] != 0.0 {
                    return Err(domain("cholesky factor must be lower triangular"));
                }
            }
        }
        Ok(Self { loc, chol })
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn entropy(&self) -> f64 {
        mvn_entropy(&self.chol)
    }
}

pub fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + log_gamma(shape) + (1.0 - shape) * digamma(shape)
}

pub fn normal_entropy(var: f64) -> f64 {
    0.5 * (2.0 * PI * E * var).ln()
}

/// Entropy from a Cholesky factor: `L/2 ln(2 pi e) + sum ln diag`.
pub fn mvn_entropy(chol: &DMatrix<f64>) -> f64 {
    let l = chol.nrows();
    let log_det_half: f64 = (0..l).map(|i| chol[(i, i)].ln()).sum();
    0.5 * l as f64 * (2.0 * PI * E).ln() + log_det_half
}

pub fn poisson_logpmf(y: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || y < 0.0 || y.fract() != 0.0 {
        return Err(domain(format!("poisson_logpmf({y}, {lambda})")));
    }
    Ok(y * lambda.ln() - lambda - log_gamma(y + 1.0))
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> Result<f64> {
    if !(x > 0.0 && shape > 0.0 && rate > 0.0) {
        return Err(domain(format!("gamma_logpdf({x}; {shape}, {rate})")));
    }
    Ok(shape * rate.ln() - log_gamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

pub fn normal_logpdf(x: f64, loc: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(domain(format!("normal_logpdf variance {var}")));
    }
    let d = x - loc;
    Ok(-0.5 * (LN_2PI + var.ln() + d * d / var))
}

pub fn mvn_logpdf(x: &DVector<f64>, loc: &DVector<f64>, chol: &DMatrix<f64>) -> Result<f64> {
    let l = loc.len();
    if x.len() != l || chol.nrows() != l {
        return Err(domain("mvn_logpdf dimension mismatch"));
    }
    let diff = x - loc;
    let white = chol
        .solve_lower_triangular(&diff)
        .ok_or_else(|| domain("mvn_logpdf: singular cholesky factor"))?;
    let log_det_half: f64 = (0..l).map(|i| chol[(i, i)].ln()).sum();
    Ok(-0.5 * l as f64 * LN_2PI - log_det_half - 0.5 * white.norm_squared())
}

/// Draws from Gamma(shape, rate) with the Marsaglia-Tsang squeeze. For
/// `shape < 1` a draw at `shape + 1` is boosted by `u^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(g: &GammaParams, rng: &mut R) -> f64 {
    sample_gamma_raw(g.shape, g.rate, rng)
}

pub(crate) fn sample_gamma_raw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma_raw(shape + 1.0, rate, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let z2 = z * z;
        if u < 1.0 - 0.0331 * z2 * z2 {
            return d * v / rate;
        }
        if u.ln() < 0.5 * z2 + d * (1.0 - v + v.ln()) {
            return d * v / rate;
        }
    }
}

/// Reparameterized normal draw: a pure function of `(params, z)`.
#[inline]
pub fn sample_normal_reparam(n: &NormalParams, z: f64) -> f64 {
    n.loc + n.var.sqrt() * z
}

pub fn sample_mvn(m: &MvnParams, z: &DVector<f64>) -> DVector<f64> {
    &m.loc + &m.chol * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_closed_forms() {
        assert!((normal_entropy(1.0) - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!((gamma_entropy(1.0, 1.0) - 1.0).abs() < 1e-12);
        let m = MvnParams::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((m.entropy() - 2.0 * 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn log_density_values() {
        assert!((poisson_logpmf(0.0, 1.0).unwrap() + 1.0).abs() < 1e-12);
        assert!((normal_logpdf(0.0, 0.0, 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert!((gamma_logpdf(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-12);
        let chol = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 1.0]);
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let mu = DVector::from_vec(vec![0.1, 0.1]);
        // Independent route: explicit inverse and determinant.
        let cov: DMatrix<f64> = &chol * chol.transpose();
        let d = &x - &mu;
        let q: f64 = (d.transpose() * cov.clone().try_inverse().unwrap() * &d)[(0, 0)];
        let expected = -LN_2PI - 0.5 * cov.determinant().ln() - 0.5 * q;
        assert!((mvn_logpdf(&x, &mu, &chol).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn domain_violations() {
        assert!(poisson_logpmf(1.0, 0.0).is_err());
        assert!(gamma_logpdf(0.0, 1.0, 1.0).is_err());
        assert!(normal_logpdf(0.0, 0.0, 0.0).is_err());
        assert!(GammaParams::new(0.0, 1.0).is_err());
        assert!(NormalParams::new(0.0, -1.0).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!(MvnParams::new(DVector::zeros(2), bad).is_err());
    }

    #[test]
    fn reparam_is_deterministic() {
        let n = NormalParams::new(3.0, 4.0).unwrap();
        assert_eq!(sample_normal_reparam(&n, 0.0), 3.0);
        let s = NormalParams::new(0.0, 1.0).unwrap();
        assert_eq!(sample_normal_reparam(&s, 1.5), 1.5);
    }

    #[test]
    fn gamma_sampler_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GammaParams::new(2.0, 4.0).unwrap();
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_gamma(&g, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() / 0.5 < 0.01, "mean {mean}");
        let small = GammaParams::new(0.3, 1.0).unwrap();
        let mean = (0..n).map(|_| sample_gamma(&small, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.3).abs() / 0.3 < 0.02, "mean {mean}");
    }

    #[test]
    fn entropies_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let g = GammaParams::new(2.5, 1.7).unwrap();
        let mc: f64 = (0..n)
            .map(|_| -gamma_logpdf(sample_gamma(&g, &mut rng), g.shape, g.rate).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mc - g.entropy()).abs() / g.entropy().abs() < 0.005);

        let nrm = NormalParams::new(0.4, 0.3).unwrap();
        let mc: f64 = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                -normal_logpdf(sample_normal_reparam(&nrm, z), nrm.loc, nrm.var).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mc - nrm.entropy()).abs() / nrm.entropy().abs() < 0.005);

        let m = MvnParams::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.4, 0.8]),
        )
        .unwrap();
        let mc: f64 = (0..n)
            .map(|_| {
                let z = DVector::from_fn(2, |_, _| rng.sample(StandardNormal));
                -mvn_logpdf(&sample_mvn(&m, &z), &m.loc, &m.chol).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mc - m.entropy()).abs() / m.entropy().abs() < 0.005);
    }
}
