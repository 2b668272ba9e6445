//! Closed-form coordinate proposals for every block except the polarity
//! values and positions, plus the blending rules.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::error::{Error, Result};
use crate::math::expected_factor;
use crate::model::{ExpectationMode, Hyperparams};
use crate::state::{GammaBlock, NormalBlock, VariationalState};

/// How the ideological factor enters the Poisson rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ideology {
    /// Factor fixed at one: plain Poisson factorization.
    Pinned,
    Active(ExpectationMode),
}

impl Ideology {
    /// `E[exp(eta_kv * x_ak)]` or its geometric replacement.
    #[inline]
    pub fn factor(self, s: &VariationalState, a: usize, k: usize, v: usize) -> f64 {
        match self {
            Ideology::Pinned => 1.0,
            Ideology::Active(mode) => {
                let kv = k * s.dims.terms + v;
                let ai = a * s.dims.position_topics + s.pos_col(k);
                let (me, mi) = (s.polarity.loc[kv], s.ideal.loc[ai]);
                match mode {
                    ExpectationMode::Exact => {
                        expected_factor(me, s.polarity.var(kv), mi, s.ideal.var(ai))
                    }
                    ExpectationMode::Geometric => (me * mi).exp(),
                }
            }
        }
    }

    /// `E[eta_kv] E[x_ak]`, the shift of the allocation logits.
    #[inline]
    pub fn cross(self, s: &VariationalState, a: usize, k: usize, v: usize) -> f64 {
        match self {
            Ideology::Pinned => 0.0,
            Ideology::Active(_) => {
                let kv = k * s.dims.terms + v;
                s.polarity.loc[kv] * s.ideal.loc[a * s.dims.position_topics + s.pos_col(k)]
            }
        }
    }
}

/// Documents of one mini-batch and the distinct authors they cover.
#[derive(Debug, Clone)]
pub struct Batch {
    pub docs: Vec<usize>,
    pub authors: Vec<usize>,
    /// Position in `authors` of each document's author.
    pub slot: Vec<usize>,
    /// `num_docs / docs.len()`.
    pub scale: f64,
}

impl Batch {
    pub fn new(m: &DocTermMatrix, mut docs: Vec<usize>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Internal("empty batch".into()));
        }
        docs.sort_unstable();
        docs.dedup();
        let mut authors: Vec<usize> = docs.iter().map(|&d| m.author(d)).collect();
        authors.sort_unstable();
        authors.dedup();
        let slot = docs
            .iter()
            .map(|&d| authors.binary_search(&m.author(d)).expect("author present"))
            .collect();
        let scale = m.num_docs() as f64 / docs.len() as f64;
        Ok(Self {
            docs,
            authors,
            slot,
            scale,
        })
    }

    pub fn full(m: &DocTermMatrix) -> Result<Self> {
        Self::new(m, (0..m.num_docs()).collect())
    }
}

/// Expectations of the topic-term intensities reused within one step.
#[derive(Debug, Clone)]
pub struct TermMoments {
    pub mean: Vec<f64>,
    pub mean_log: Vec<f64>,
}

impl TermMoments {
    pub fn new(s: &VariationalState) -> Self {
        Self {
            mean: s.topic_term.means(),
            mean_log: s.topic_term.mean_logs(),
        }
    }
}

/// `sum_v E[beta_kv] E[factor_akv]` for each listed author (rows) and topic.
pub fn author_topic_sums(
    s: &VariationalState,
    ideology: Ideology,
    authors: &[usize],
    tm: &TermMoments,
) -> Vec<f64> {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    if ideology == Ideology::Pinned {
        let row: Vec<f64> = (0..k_n)
            .map(|k| tm.mean[k * v_n..(k + 1) * v_n].iter().sum())
            .collect();
        return authors.iter().flat_map(|_| row.iter().copied()).collect();
    }
    let rows: Vec<Vec<f64>> = authors
        .par_iter()
        .map(|&a| {
            (0..k_n)
                .map(|k| {
                    (0..v_n)
                        .map(|v| tm.mean[k * v_n + v] * ideology.factor(s, a, k, v))
                        .sum()
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Allocation probabilities for every nonzero count of the batch, `K`
/// entries per nonzero, documents in batch order.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub offsets: Vec<usize>,
    pub probs: Vec<f64>,
    pub topics: usize,
}

impl Allocation {
    /// Probabilities of the `j`-th nonzero of the `i`-th batch document.
    pub fn probs_of(&self, i: usize, j: usize) -> &[f64] {
        let start = (self.offsets[i] + j) * self.topics;
        &self.probs[start..start + self.topics]
    }
}

pub fn allocation_probs(
    s: &VariationalState,
    m: &DocTermMatrix,
    batch: &Batch,
    ideology: Ideology,
    tm: &TermMoments,
) -> Allocation {
    let k_n = s.dims.topics;
    let v_n = s.dims.terms;
    let per_doc: Vec<Vec<f64>> = batch
        .docs
        .par_iter()
        .map(|&d| {
            let a = m.author(d);
            let elog_theta: Vec<f64> = (0..k_n).map(|k| s.doc_topic.mean_log(d * k_n + k)).collect();
            let terms = m.row_terms(d);
            let mut out = Vec::with_capacity(terms.len() * k_n);
            let mut logits = vec![0.0; k_n];
            for &v in terms {
                let v = v as usize;
                for k in 0..k_n {
                    logits[k] = elog_theta[k] + tm.mean_log[k * v_n + v] + ideology.cross(s, a, k, v);
                }
                softmax_into(&logits, &mut out);
            }
            out
        })
        .collect();
    let mut offsets = Vec::with_capacity(batch.docs.len() + 1);
    offsets.push(0);
    for &d in &batch.docs {
        offsets.push(offsets.last().unwrap() + m.row_terms(d).len());
    }
    Allocation {
        offsets,
        probs: per_doc.concat(),
        topics: k_n,
    }
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut z = 0.0;
    for &l in logits {
        let e = (l - mx).exp();
        z += e;
        out.push(e);
    }
    for p in &mut out[start..] {
        *p /= z;
    }
}

/// `log sum_k exp(x_k)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + x.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln()
}

/// Optimal document intensities of the batch documents (rows in batch order).
pub fn update_local_theta(
    s: &VariationalState,
    m: &DocTermMatrix,
    batch: &Batch,
    alloc: &Allocation,
    topic_sums: &[f64],
    hyper: &Hyperparams,
) -> GammaBlock {
    let k_n = s.dims.topics;
    let mut out = GammaBlock::filled(batch.docs.len() * k_n, hyper.doc_topic_shape, 1.0);
    for (i, &d) in batch.docs.iter().enumerate() {
        let a = m.author(d);
        let rate = s.author_rate.mean(a);
        for (j, &y) in m.row_counts(d).iter().enumerate() {
            let p = alloc.probs_of(i, j);
            for k in 0..k_n {
                out.shape[i * k_n + k] += y as f64 * p[k];
            }
        }
        for k in 0..k_n {
            out.rate[i * k_n + k] = rate + topic_sums[batch.slot[i] * k_n + k];
        }
    }
    out
}

pub fn apply_local_theta(s: &mut VariationalState, batch: &Batch, local: &GammaBlock) {
    let k_n = s.dims.topics;
    for (i, &d) in batch.docs.iter().enumerate() {
        s.doc_topic.shape[d * k_n..(d + 1) * k_n].copy_from_slice(&local.shape[i * k_n..(i + 1) * k_n]);
        s.doc_topic.rate[d * k_n..(d + 1) * k_n].copy_from_slice(&local.rate[i * k_n..(i + 1) * k_n]);
    }
}

/// Author rate proposal with batch statistics scaled to the full corpus.
pub fn update_author_rates(
    s: &VariationalState,
    m: &DocTermMatrix,
    batch: &Batch,
    hyper: &Hyperparams,
) -> GammaBlock {
    let k_n = s.dims.topics;
    let mut out = GammaBlock::filled(s.dims.authors, hyper.author_rate_shape, hyper.author_rate_rate());
    for &d in &batch.docs {
        let a = m.author(d);
        out.shape[a] += batch.scale * k_n as f64 * hyper.doc_topic_shape;
        let sum: f64 = (0..k_n).map(|k| s.doc_topic.mean(d * k_n + k)).sum();
        out.rate[a] += batch.scale * sum;
    }
    out
}

/// Topic-term intensity proposal.
pub fn update_topic_terms(
    s: &VariationalState,
    m: &DocTermMatrix,
    batch: &Batch,
    alloc: &Allocation,
    ideology: Ideology,
    hyper: &Hyperparams,
) -> GammaBlock {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    let mut shape = vec![0.0; k_n * v_n];
    for (i, &d) in batch.docs.iter().enumerate() {
        for (j, (&v, &y)) in m.row_terms(d).iter().zip(m.row_counts(d)).enumerate() {
            let p = alloc.probs_of(i, j);
            for k in 0..k_n {
                shape[k * v_n + v as usize] += y as f64 * p[k];
            }
        }
    }
    // Per author, the summed document intensities within the batch.
    let mut theta_sums = vec![0.0; batch.authors.len() * k_n];
    for (i, &d) in batch.docs.iter().enumerate() {
        for k in 0..k_n {
            theta_sums[batch.slot[i] * k_n + k] += s.doc_topic.mean(d * k_n + k);
        }
    }
    let rate_rows: Vec<Vec<f64>> = (0..k_n)
        .into_par_iter()
        .map(|k| {
            let mut row = vec![0.0; v_n];
            for (slot, &a) in batch.authors.iter().enumerate() {
                let t = theta_sums[slot * k_n + k];
                if ideology == Ideology::Pinned {
                    row.iter_mut().for_each(|r| *r += t);
                } else {
                    for (v, r) in row.iter_mut().enumerate() {
                        *r += t * ideology.factor(s, a, k, v);
                    }
                }
            }
            row
        })
        .collect();
    let mut out = GammaBlock::filled(k_n * v_n, 0.0, 0.0);
    for k in 0..k_n {
        for v in 0..v_n {
            let kv = k * v_n + v;
            out.shape[kv] = hyper.topic_term_shape + batch.scale * shape[kv];
            out.rate[kv] = s.term_rate.mean(v) + batch.scale * rate_rows[k][v];
        }
    }
    out
}

pub fn update_term_rates(s: &VariationalState, hyper: &Hyperparams) -> GammaBlock {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    let shape = hyper.term_rate_shape + k_n as f64 * hyper.topic_term_shape;
    let mut out = GammaBlock::filled(v_n, shape, hyper.term_rate_rate());
    for k in 0..k_n {
        for v in 0..v_n {
            out.rate[v] += s.topic_term.mean(k * v_n + v);
        }
    }
    out
}

pub fn update_polarity_prec(s: &VariationalState, hyper: &Hyperparams) -> GammaBlock {
    let (k_n, v_n) = (s.dims.topics, s.dims.terms);
    let shape = hyper.polarity_prec_shape + 0.5 * v_n as f64;
    let mut out = GammaBlock::filled(k_n, shape, 0.0);
    for k in 0..k_n {
        let sq: f64 = (0..v_n)
            .map(|v| {
                let kv = k * v_n + v;
                s.polarity.loc[kv].powi(2) + s.polarity.var(kv)
            })
            .sum();
        out.rate[k] = s.polarity_prec_rate.mean(k) + 0.5 * sq;
    }
    out
}

pub fn update_polarity_prec_rate(s: &VariationalState, hyper: &Hyperparams) -> GammaBlock {
    let shape = hyper.polarity_prec_rate_shape + hyper.polarity_prec_shape;
    let mut out = GammaBlock::filled(s.dims.topics, shape, 0.0);
    for k in 0..s.dims.topics {
        out.rate[k] = hyper.polarity_prec_rate_rate() + s.polarity_prec.mean(k);
    }
    out
}

/// Regression coefficient proposal: one mean row per position column and
/// the shared covariance.
#[derive(Debug, Clone)]
pub struct CoefProposal {
    pub loc: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn update_coefficients(s: &VariationalState, design: &DesignMatrix) -> Result<CoefProposal> {
    let (a_n, l_n, kp) = (s.dims.authors, s.dims.covariates, s.dims.position_topics);
    let x = &design.x;
    let mut precision = DMatrix::from_diagonal(&DVector::from_iterator(
        l_n,
        (0..l_n).map(|l| s.coef_prec.mean(l)),
    ));
    for a in 0..a_n {
        let w = s.ideal_prec.mean(a);
        let xa = x.row(a).transpose();
        precision += w * &xa * xa.transpose();
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Internal("coefficient precision is not positive definite".into()))?;
    let mut loc = vec![0.0; kp * l_n];
    for j in 0..kp {
        let mut rhs = DVector::from_iterator(
            l_n,
            (0..l_n).map(|l| s.coef_prec.mean(l) * s.coef_center.loc[l]),
        );
        for a in 0..a_n {
            let w = s.ideal_prec.mean(a) * s.ideal.loc[a * kp + j];
            for l in 0..l_n {
                rhs[l] += w * x[(a, l)];
            }
        }
        let sol = chol.solve(&rhs);
        loc[j * l_n..(j + 1) * l_n].copy_from_slice(sol.as_slice());
    }
    Ok(CoefProposal {
        loc,
        covariance: chol.inverse(),
    })
}

/// Moves the coefficient block toward `prop` by `rho` in (mean,
/// covariance) coordinates and refactors the covariance.
pub fn blend_coefficients(s: &mut VariationalState, prop: &CoefProposal, rho: f64) -> Result<()> {
    let l_n = s.dims.covariates;
    for (c, p) in s.coef_loc.iter_mut().zip(&prop.loc) {
        *c = (1.0 - rho) * *c + rho * p;
    }
    let cov = (1.0 - rho) * s.coef_covariance() + rho * &prop.covariance;
    let cov = 0.5 * (&cov + cov.transpose());
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::NonFinite { term: "coef_chol".into(), step: s.step })?
        .l();
    for r in 0..l_n {
        for c in 0..l_n {
            s.coef_chol[r * l_n + c] = if c <= r { chol[(r, c)] } else { 0.0 };
        }
    }
    Ok(())
}

pub fn update_coef_centers(s: &VariationalState) -> NormalBlock {
    let (l_n, kp) = (s.dims.covariates, s.dims.position_topics);
    let mut out = NormalBlock::filled(l_n, 0.0, 1.0);
    for l in 0..l_n {
        let w = s.coef_prec.mean(l);
        let var = 1.0 / (1.0 + kp as f64 * w);
        let sum: f64 = (0..kp).map(|j| s.coef_loc[j * l_n + l]).sum();
        out.var[l] = var;
        out.loc[l] = var * w * sum;
    }
    out
}

/// `x_a' Sigma x_a` for every author, with `Sigma` the coefficient covariance.
pub fn design_quadratic_forms(s: &VariationalState, design: &DesignMatrix) -> Vec<f64> {
    let c = s.coef_chol_matrix();
    (0..s.dims.authors)
        .map(|a| {
            let xa = design.x.row(a).transpose();
            (c.transpose() * xa).norm_squared()
        })
        .collect()
}

/// `x_a' E[coef_j]` for every author and position column.
pub fn predicted_positions(s: &VariationalState, design: &DesignMatrix) -> Vec<f64> {
    let (a_n, l_n, kp) = (s.dims.authors, s.dims.covariates, s.dims.position_topics);
    let mut out = vec![0.0; a_n * kp];
    for a in 0..a_n {
        for j in 0..kp {
            out[a * kp + j] = (0..l_n).map(|l| design.x[(a, l)] * s.coef_loc[j * l_n + l]).sum();
        }
    }
    out
}

pub fn update_ideal_prec(s: &VariationalState, design: &DesignMatrix, hyper: &Hyperparams) -> GammaBlock {
    let kp = s.dims.position_topics;
    let quad = design_quadratic_forms(s, design);
    let pred = predicted_positions(s, design);
    let shape = hyper.ideal_prec_shape + 0.5 * kp as f64;
    let mut out = GammaBlock::filled(s.dims.authors, shape, 0.0);
    for a in 0..s.dims.authors {
        let sq: f64 = (0..kp)
            .map(|j| {
                let i = a * kp + j;
                (s.ideal.loc[i] - pred[i]).powi(2) + s.ideal.var(i) + quad[a]
            })
            .sum();
        out.rate[a] = hyper.ideal_prec_rate + 0.5 * sq;
    }
    out
}

pub fn update_coef_prec(s: &VariationalState, hyper: &Hyperparams) -> GammaBlock {
    let (l_n, kp) = (s.dims.covariates, s.dims.position_topics);
    let cov_diag: Vec<f64> = (0..l_n)
        .map(|l| (0..=l).map(|c| s.coef_chol[l * l_n + c].powi(2)).sum())
        .collect();
    let shape = hyper.coef_prec_shape + 0.5 * kp as f64;
    let mut out = GammaBlock::filled(l_n, shape, 0.0);
    for l in 0..l_n {
        let sq: f64 = (0..kp)
            .map(|j| (s.coef_loc[j * l_n + l] - s.coef_center.loc[l]).powi(2) + cov_diag[l] + s.coef_center.var[l])
            .sum();
        out.rate[l] = s.coef_prec_rate.mean(l) + 0.5 * sq;
    }
    out
}

pub fn update_coef_prec_rate(s: &VariationalState, hyper: &Hyperparams) -> GammaBlock {
    let shape = hyper.coef_prec_rate_shape + hyper.coef_prec_shape;
    let mut out = GammaBlock::filled(s.dims.covariates, shape, 0.0);
    for l in 0..s.dims.covariates {
        out.rate[l] = hyper.coef_prec_rate_rate() + s.coef_prec.mean(l);
    }
    out
}

/// Applies all global proposals in dependency order, each computed from
/// the already blended earlier blocks.
pub fn update_globals(
    s: &mut VariationalState,
    m: &DocTermMatrix,
    design: &DesignMatrix,
    batch: &Batch,
    alloc: &Allocation,
    ideology: Ideology,
    hyper: &Hyperparams,
    rho: f64,
) -> Result<()> {
    let p = update_author_rates(s, m, batch, hyper);
    s.author_rate.blend(&p, rho);
    let p = update_topic_terms(s, m, batch, alloc, ideology, hyper);
    s.topic_term.blend(&p, rho);
    let p = update_term_rates(s, hyper);
    s.term_rate.blend(&p, rho);
    if ideology == Ideology::Pinned {
        return Ok(());
    }
    let p = update_polarity_prec(s, hyper);
    s.polarity_prec.blend(&p, rho);
    let p = update_polarity_prec_rate(s, hyper);
    s.polarity_prec_rate.blend(&p, rho);
    let p = update_coefficients(s, design)?;
    blend_coefficients(s, &p, rho)?;
    let p = update_coef_centers(s);
    s.coef_center.blend(&p, rho);
    let p = update_ideal_prec(s, design, hyper);
    s.ideal_prec.blend(&p, rho);
    let p = update_coef_prec(s, hyper);
    s.coef_prec.blend(&p, rho);
    let p = update_coef_prec_rate(s, hyper);
    s.coef_prec_rate.blend(&p, rho);
    Ok(())
}
