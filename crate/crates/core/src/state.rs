//! Variational parameters of every latent block, stored as flat row-major
//! arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{digamma, gamma_entropy, logit, normal_entropy, sigmoid};

/// Upper bound on a variance logit, keeping variances strictly below one.
pub const MAX_VAR_LOGIT: f64 = 30.0;
pub const MIN_VAR_LOGIT: f64 = -30.0;

/// Independent gamma factors in shape/rate form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBlock {
    pub shape: Vec<f64>,
    pub rate: Vec<f64>,
}

impl GammaBlock {
    pub fn filled(n: usize, shape: f64, rate: f64) -> Self {
        Self {
            shape: vec![shape; n],
            rate: vec![rate; n],
        }
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        self.shape[i] / self.rate[i]
    }

    #[inline]
    pub fn mean_log(&self, i: usize) -> f64 {
        digamma(self.shape[i]) - self.rate[i].ln()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.mean(i)).collect()
    }

    pub fn mean_logs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.mean_log(i)).collect()
    }

    pub fn entropy(&self) -> f64 {
        (0..self.len()).map(|i| gamma_entropy(self.shape[i], self.rate[i])).sum()
    }

    /// Moves toward `proposal` by `rho` in shape/rate coordinates.
    pub fn blend(&mut self, proposal: &GammaBlock, rho: f64) {
        blend_vec(&mut self.shape, &proposal.shape, rho);
        blend_vec(&mut self.rate, &proposal.rate, rho);
    }

    fn is_valid(&self) -> bool {
        self.shape.len() == self.rate.len()
            && self
                .shape
                .iter()
                .chain(&self.rate)
                .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Independent normal factors with unconstrained variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalBlock {
    pub loc: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormalBlock {
    pub fn filled(n: usize, loc: f64, var: f64) -> Self {
        Self {
            loc: vec![loc; n],
            var: vec![var; n],
        }
    }

    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        self.var.iter().map(|&v| normal_entropy(v)).sum()
    }

    pub fn blend(&mut self, proposal: &NormalBlock, rho: f64) {
        blend_vec(&mut self.loc, &proposal.loc, rho);
        blend_vec(&mut self.var, &proposal.var, rho);
    }

    fn is_valid(&self) -> bool {
        self.loc.len() == self.var.len()
            && self.loc.iter().all(|v| v.is_finite())
            && self.var.iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Normal factors whose variance is `sigmoid(var_logit)`, so always in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedNormalBlock {
    pub loc: Vec<f64>,
    pub var_logit: Vec<f64>,
}

impl BoundedNormalBlock {
    pub fn new(loc: Vec<f64>, var: f64) -> Result<Self> {
        if !(var > 0.0 && var < 1.0) {
            return Err(Error::Config(format!("initial variance must lie in (0, 1), got {var}")));
        }
        let n = loc.len();
        Ok(Self {
            loc,
            var_logit: vec![logit(var); n],
        })
    }

    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    #[inline]
    pub fn var(&self, i: usize) -> f64 {
        sigmoid(self.var_logit[i])
    }

    pub fn vars(&self) -> Vec<f64> {
        self.var_logit.iter().map(|&u| sigmoid(u)).collect()
    }

    pub fn entropy(&self) -> f64 {
        self.var_logit.iter().map(|&u| normal_entropy(sigmoid(u))).sum()
    }

    fn is_valid(&self) -> bool {
        self.loc.len() == self.var_logit.len()
            && self.loc.iter().all(|v| v.is_finite())
            && self
                .var_logit
                .iter()
                .all(|u| u.is_finite() && (MIN_VAR_LOGIT..=MAX_VAR_LOGIT).contains(u))
    }
}

/// First and second moment estimates of one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adam state for the four stochastically optimized vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub polarity_loc: AdamMoments,
    pub polarity_var: AdamMoments,
    pub ideal_loc: AdamMoments,
    pub ideal_var: AdamMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub docs: usize,
    pub terms: usize,
    pub topics: usize,
    pub authors: usize,
    pub covariates: usize,
    /// Columns of the position and coefficient blocks: `topics`, or 1 when
    /// positions are shared across topics.
    pub position_topics: usize,
}

/// Full variational state. Shapes (row-major):
///
/// * `doc_topic`: docs x topics; `author_rate`: authors
/// * `topic_term`, `polarity`: topics x terms; `term_rate`: terms
/// * `polarity_prec`, `polarity_prec_rate`: topics
/// * `ideal`: authors x position_topics; `ideal_prec`: authors
/// * `coef_loc`: position_topics x covariates; `coef_chol`: covariates x
///   covariates lower Cholesky factor of the covariance shared by all rows
/// * `coef_center`, `coef_prec`, `coef_prec_rate`: covariates
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub dims: Dims,
    pub doc_topic: GammaBlock,
    pub author_rate: GammaBlock,
    pub topic_term: GammaBlock,
    pub term_rate: GammaBlock,
    pub polarity: BoundedNormalBlock,
    pub polarity_prec: GammaBlock,
    pub polarity_prec_rate: GammaBlock,
    pub ideal: BoundedNormalBlock,
    pub ideal_prec: GammaBlock,
    pub coef_loc: Vec<f64>,
    pub coef_chol: Vec<f64>,
    pub coef_center: NormalBlock,
    pub coef_prec: GammaBlock,
    pub coef_prec_rate: GammaBlock,
    pub adam: AdamState,
    /// Number of mini-batch steps taken.
    pub step: u64,
}

impl VariationalState {
    /// Position column used by topic `k`.
    #[inline]
    pub fn pos_col(&self, k: usize) -> usize {
        if self.dims.position_topics == 1 {
            0
        } else {
            k
        }
    }

    pub fn coef_chol_matrix(&self) -> DMatrix<f64> {
        let l = self.dims.covariates;
        DMatrix::from_row_slice(l, l, &self.coef_chol)
    }

    pub fn coef_covariance(&self) -> DMatrix<f64> {
        let c = self.coef_chol_matrix();
        &c * c.transpose()
    }

    pub fn coef_row(&self, j: usize) -> DVector<f64> {
        let l = self.dims.covariates;
        DVector::from_row_slice(&self.coef_loc[j * l..(j + 1) * l])
    }

    /// Checks shapes against `dims` and that every parameter is finite and
    /// inside its domain.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let expect = [
            ("doc_topic", self.doc_topic.len(), d.docs * d.topics),
            ("author_rate", self.author_rate.len(), d.authors),
            ("topic_term", self.topic_term.len(), d.topics * d.terms),
            ("term_rate", self.term_rate.len(), d.terms),
            ("polarity", self.polarity.len(), d.topics * d.terms),
            ("polarity_prec", self.polarity_prec.len(), d.topics),
            ("polarity_prec_rate", self.polarity_prec_rate.len(), d.topics),
            ("ideal", self.ideal.len(), d.authors * d.position_topics),
            ("ideal_prec", self.ideal_prec.len(), d.authors),
            ("coef_loc", self.coef_loc.len(), d.position_topics * d.covariates),
            ("coef_chol", self.coef_chol.len(), d.covariates * d.covariates),
            ("coef_center", self.coef_center.len(), d.covariates),
            ("coef_prec", self.coef_prec.len(), d.covariates),
            ("coef_prec_rate", self.coef_prec_rate.len(), d.covariates),
            ("adam.polarity_loc", self.adam.polarity_loc.m.len(), d.topics * d.terms),
            ("adam.polarity_var", self.adam.polarity_var.m.len(), d.topics * d.terms),
            ("adam.ideal_loc", self.adam.ideal_loc.m.len(), d.authors * d.position_topics),
            ("adam.ideal_var", self.adam.ideal_var.m.len(), d.authors * d.position_topics),
        ];
        for (name, found, want) in expect {
            if found != want {
                return Err(Error::Dimension(format!("{name}: expected {want} entries, found {found}")));
            }
        }
        if d.position_topics != 1 && d.position_topics != d.topics {
            return Err(Error::Dimension(format!(
                "position_topics must be 1 or {}, found {}",
                d.topics, d.position_topics
            )));
        }
        self.check_finite(self.step)
    }

    /// Names the first block holding a non-finite or out-of-domain value.
    pub fn check_finite(&self, step: u64) -> Result<()> {
        let gammas = [
            ("doc_topic", &self.doc_topic),
            ("author_rate", &self.author_rate),
            ("topic_term", &self.topic_term),
            ("term_rate", &self.term_rate),
            ("polarity_prec", &self.polarity_prec),
            ("polarity_prec_rate", &self.polarity_prec_rate),
            ("ideal_prec", &self.ideal_prec),
            ("coef_prec", &self.coef_prec),
            ("coef_prec_rate", &self.coef_prec_rate),
        ];
        for (name, g) in gammas {
            if !g.is_valid() {
                return Err(Error::NonFinite { term: name.into(), step });
            }
        }
        if !self.polarity.is_valid() {
            return Err(Error::NonFinite { term: "polarity".into(), step });
        }
        if !self.ideal.is_valid() {
            return Err(Error::NonFinite { term: "ideal".into(), step });
        }
        if !self.coef_center.is_valid() {
            return Err(Error::NonFinite { term: "coef_center".into(), step });
        }
        if !self.coef_loc.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { term: "coef_loc".into(), step });
        }
        let l = self.dims.covariates;
        let chol_ok = self.coef_chol.iter().all(|v| v.is_finite())
            && (0..l).all(|i| self.coef_chol[i * l + i] > 0.0)
            && (0..l).all(|i| (i + 1..l).all(|j| self.coef_chol[i * l + j] == 0.0));
        if !chol_ok {
            return Err(Error::NonFinite { term: "coef_chol".into(), step });
        }
        Ok(())
    }
}

fn blend_vec(cur: &mut [f64], proposal: &[f64], rho: f64) {
    debug_assert_eq!(cur.len(), proposal.len());
    for (c, p) in cur.iter_mut().zip(proposal) {
        *c = (1.0 - rho) * *c + rho * p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_block_blend_and_moments() {
        let mut g = GammaBlock::filled(2, 2.0, 4.0);
        let p = GammaBlock::filled(2, 4.0, 2.0);
        g.blend(&p, 0.25);
        assert_eq!(g.shape, vec![2.5, 2.5]);
        assert_eq!(g.rate, vec![3.5, 3.5]);
        assert!((g.mean(0) - 2.5 / 3.5).abs() < 1e-15);
        g.blend(&p, 1.0);
        assert_eq!(g, p);
    }

    #[test]
    fn bounded_variance_stays_below_one() {
        let mut b = BoundedNormalBlock::new(vec![0.0; 3], 0.25).unwrap();
        assert!((b.var(0) - 0.25).abs() < 1e-15);
        b.var_logit[1] = MAX_VAR_LOGIT;
        assert!(b.var(1) < 1.0);
        assert!(BoundedNormalBlock::new(vec![0.0], 1.0).is_err());
    }
}
