//! Closed-form evidence lower bound with the allocation probabilities
//! profiled out.

use rayon::prelude::*;

use super::updates::{author_topic_sums, design_quadratic_forms, log_sum_exp, predicted_positions, Ideology, TermMoments};
use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::error::{Error, Result};
use crate::math::{log_gamma, mvn_entropy, LN_2PI};
use crate::model::Hyperparams;
use crate::state::{GammaBlock, VariationalState};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub log_prior: f64,
    pub entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.log_prior + self.entropy
    }
}

/// `E[ln Gamma(x | shape, b)]` for independent `x` and rate `b`.
#[inline]
pub(crate) fn gamma_prior(shape: f64, e_log_rate: f64, e_rate: f64, e_log_x: f64, e_x: f64) -> f64 {
    shape * e_log_rate - log_gamma(shape) + (shape - 1.0) * e_log_x - e_rate * e_x
}

/// Prior term of a gamma block with a constant rate.
fn fixed_rate_prior(g: &GammaBlock, shape: f64, rate: f64) -> f64 {
    (0..g.len())
        .map(|i| gamma_prior(shape, rate.ln(), rate, g.mean_log(i), g.mean(i)))
        .sum()
}

/// Prior and entropy of the document intensities of `docs`.
pub(crate) fn doc_topic_terms(s: &VariationalState, m: &DocTermMatrix, docs: &[usize], hyper: &Hyperparams) -> (f64, f64) {
    let k_n = s.dims.topics;
    let mut prior = 0.0;
    let mut entropy = 0.0;
    for &d in docs {
        let a = m.author(d);
        let (elb, eb) = (s.author_rate.mean_log(a), s.author_rate.mean(a));
        for k in 0..k_n {
            let i = d * k_n + k;
            prior += gamma_prior(hyper.doc_topic_shape, elb, eb, s.doc_topic.mean_log(i), s.doc_topic.mean(i));
            entropy += crate::math::gamma_entropy(s.doc_topic.shape[i], s.doc_topic.rate[i]);
        }
    }
    (prior, entropy)
}

/// Prior and entropy of author rates, topic-term intensities and term rates.
pub(crate) fn poisson_global_terms(s: &VariationalState, hyper: &Hyperparams) -> (f64, f64) {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    let mut prior = fixed_rate_prior(&s.author_rate, hyper.author_rate_shape, hyper.author_rate_rate());
    prior += fixed_rate_prior(&s.term_rate, hyper.term_rate_shape, hyper.term_rate_rate());
    for k in 0..k_n {
        for v in 0..v_n {
            let i = k * v_n + v;
            prior += gamma_prior(
                hyper.topic_term_shape,
                s.term_rate.mean_log(v),
                s.term_rate.mean(v),
                s.topic_term.mean_log(i),
                s.topic_term.mean(i),
            );
        }
    }
    let entropy = s.author_rate.entropy() + s.topic_term.entropy() + s.term_rate.entropy();
    (prior, entropy)
}

/// Prior and entropy of the precision, coefficient and center blocks.
pub(crate) fn hierarchy_terms(s: &VariationalState, hyper: &Hyperparams) -> (f64, f64) {
    let (k_n, l_n, kp) = (s.dims.topics, s.dims.covariates, s.dims.position_topics);
    let mut prior = 0.0;
    for k in 0..k_n {
        prior += gamma_prior(
            hyper.polarity_prec_shape,
            s.polarity_prec_rate.mean_log(k),
            s.polarity_prec_rate.mean(k),
            s.polarity_prec.mean_log(k),
            s.polarity_prec.mean(k),
        );
    }
    prior += fixed_rate_prior(&s.polarity_prec_rate, hyper.polarity_prec_rate_shape, hyper.polarity_prec_rate_rate());
    prior += fixed_rate_prior(&s.ideal_prec, hyper.ideal_prec_shape, hyper.ideal_prec_rate);
    for l in 0..l_n {
        prior += gamma_prior(
            hyper.coef_prec_shape,
            s.coef_prec_rate.mean_log(l),
            s.coef_prec_rate.mean(l),
            s.coef_prec.mean_log(l),
            s.coef_prec.mean(l),
        );
    }
    prior += fixed_rate_prior(&s.coef_prec_rate, hyper.coef_prec_rate_shape, hyper.coef_prec_rate_rate());
    let cov_diag: Vec<f64> = (0..l_n)
        .map(|l| (0..=l).map(|c| s.coef_chol[l * l_n + c].powi(2)).sum())
        .collect();
    for l in 0..l_n {
        let (ew, elw) = (s.coef_prec.mean(l), s.coef_prec.mean_log(l));
        let (mc, vc) = (s.coef_center.loc[l], s.coef_center.var[l]);
        for j in 0..kp {
            let sq = (s.coef_loc[j * l_n + l] - mc).powi(2) + cov_diag[l] + vc;
            prior += 0.5 * elw - 0.5 * LN_2PI - 0.5 * ew * sq;
        }
        prior += -0.5 * LN_2PI - 0.5 * (mc * mc + vc);
    }
    let entropy = s.polarity_prec.entropy()
        + s.polarity_prec_rate.entropy()
        + s.ideal_prec.entropy()
        + s.coef_prec.entropy()
        + s.coef_prec_rate.entropy()
        + s.coef_center.entropy()
        + kp as f64 * mvn_entropy(&s.coef_chol_matrix());
    (prior, entropy)
}

/// Closed-form prior and entropy of the polarity values and positions.
pub(crate) fn polarity_position_terms(s: &VariationalState, design: &DesignMatrix) -> (f64, f64) {
    let (k_n, v_n, kp) = (s.dims.topics, s.dims.terms, s.dims.position_topics);
    let mut prior = 0.0;
    for k in 0..k_n {
        let (er, elr) = (s.polarity_prec.mean(k), s.polarity_prec.mean_log(k));
        for v in 0..v_n {
            let i = k * v_n + v;
            prior += 0.5 * elr - 0.5 * LN_2PI - 0.5 * er * (s.polarity.loc[i].powi(2) + s.polarity.var(i));
        }
    }
    let quad = design_quadratic_forms(s, design);
    let pred = predicted_positions(s, design);
    for a in 0..s.dims.authors {
        let (ei, eli) = (s.ideal_prec.mean(a), s.ideal_prec.mean_log(a));
        for j in 0..kp {
            let i = a * kp + j;
            let sq = (s.ideal.loc[i] - pred[i]).powi(2) + s.ideal.var(i) + quad[a];
            prior += 0.5 * eli - 0.5 * LN_2PI - 0.5 * ei * sq;
        }
    }
    (prior, s.polarity.entropy() + s.ideal.entropy())
}

/// Expected Poisson log likelihood with the allocation bound made tight.
pub(crate) fn exact_reconstruction(s: &VariationalState, m: &DocTermMatrix, ideology: Ideology) -> f64 {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    let tm = TermMoments::new(s);
    let authors: Vec<usize> = (0..s.dims.authors).collect();
    let sums = author_topic_sums(s, ideology, &authors, &tm);
    let per_doc: Vec<f64> = (0..m.num_docs())
        .into_par_iter()
        .map(|d| {
            let a = m.author(d);
            let elog_theta: Vec<f64> = (0..k_n).map(|k| s.doc_topic.mean_log(d * k_n + k)).collect();
            let mut logits = vec![0.0; k_n];
            let mut acc = 0.0;
            for (v, y) in m.row(d) {
                for k in 0..k_n {
                    logits[k] = elog_theta[k] + tm.mean_log[k * v_n + v] + ideology.cross(s, a, k, v);
                }
                let y = y as f64;
                acc += y * log_sum_exp(&logits) - log_gamma(y + 1.0);
            }
            for k in 0..k_n {
                acc -= s.doc_topic.mean(d * k_n + k) * sums[a * k_n + k];
            }
            acc
        })
        .collect();
    per_doc.iter().sum()
}

/// Full-corpus objective. With `Ideology::Pinned` only the Poisson
/// factorization blocks contribute.
pub fn exact_elbo(
    s: &VariationalState,
    m: &DocTermMatrix,
    design: &DesignMatrix,
    hyper: &Hyperparams,
    ideology: Ideology,
) -> Result<ElboTerms> {
    let docs: Vec<usize> = (0..m.num_docs()).collect();
    let reconstruction = exact_reconstruction(s, m, ideology);
    let (p1, e1) = doc_topic_terms(s, m, &docs, hyper);
    let (p2, e2) = poisson_global_terms(s, hyper);
    let mut out = ElboTerms {
        reconstruction,
        log_prior: p1 + p2,
        entropy: e1 + e2,
    };
    if ideology != Ideology::Pinned {
        let (p3, e3) = hierarchy_terms(s, hyper);
        let (p4, e4) = polarity_position_terms(s, design);
        out.log_prior += p3 + p4;
        out.entropy += e3 + e4;
    }
    if !out.total().is_finite() {
        return Err(Error::NonFinite { term: "elbo".into(), step: s.step });
    }
    Ok(out)
}

/// Objective with the allocation probabilities as explicit parameters.
/// Equals [`exact_elbo`] when `alloc` is the optimal allocation of `s`.
pub fn elbo_with_allocation(
    s: &VariationalState,
    m: &DocTermMatrix,
    design: &DesignMatrix,
    hyper: &Hyperparams,
    ideology: Ideology,
    alloc: &super::updates::Allocation,
) -> Result<ElboTerms> {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    let tm = TermMoments::new(s);
    let authors: Vec<usize> = (0..s.dims.authors).collect();
    let sums = author_topic_sums(s, ideology, &authors, &tm);
    let mut reconstruction = 0.0;
    for d in 0..m.num_docs() {
        let a = m.author(d);
        for (j, (v, y)) in m.row(d).enumerate() {
            let p = alloc.probs_of(d, j);
            let y = y as f64;
            for k in 0..k_n {
                if p[k] > 0.0 {
                    let logit = s.doc_topic.mean_log(d * k_n + k)
                        + tm.mean_log[k * v_n + v]
                        + ideology.cross(s, a, k, v);
                    reconstruction += y * p[k] * (logit - p[k].ln());
                }
            }
            reconstruction -= log_gamma(y + 1.0);
        }
        for k in 0..k_n {
            reconstruction -= s.doc_topic.mean(d * k_n + k) * sums[a * k_n + k];
        }
    }
    let mut out = exact_elbo(s, m, design, hyper, ideology)?;
    out.reconstruction = reconstruction;
    Ok(out)
}
