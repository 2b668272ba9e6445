//! Summaries of a fitted state: credible-region probabilities, polarity
//! scores, ideology-corrected term rankings, influential documents and the
//! regression summary.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma, Normal};
use statrs::function::erf::erfc;

use crate::corpus::{DesignMatrix, DocTermMatrix, TermKind};
use crate::error::{domain, Error, Result};
use crate::math::{digamma, GammaParams, NormalParams};
use crate::state::VariationalState;

pub const REPORT_SCHEMA: &str = "stbs_report_v1";

/// Floor applied to the counterfactual intensity in the influence statistic.
pub const MIN_INTENSITY: f64 = 1e-12;

/// Posterior means of every block, in the state's row-major shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimates {
    pub doc_topic: Vec<f64>,
    pub author_rate: Vec<f64>,
    pub topic_term: Vec<f64>,
    pub term_rate: Vec<f64>,
    pub polarity: Vec<f64>,
    pub polarity_prec: Vec<f64>,
    pub polarity_prec_rate: Vec<f64>,
    pub ideal: Vec<f64>,
    pub ideal_prec: Vec<f64>,
    pub coef: Vec<f64>,
    pub coef_center: Vec<f64>,
    pub coef_prec: Vec<f64>,
    pub coef_prec_rate: Vec<f64>,
}

pub fn posterior_means(s: &VariationalState) -> PointEstimates {
    PointEstimates {
        doc_topic: s.doc_topic.means(),
        author_rate: s.author_rate.means(),
        topic_term: s.topic_term.means(),
        term_rate: s.term_rate.means(),
        polarity: s.polarity.loc.clone(),
        polarity_prec: s.polarity_prec.means(),
        polarity_prec_rate: s.polarity_prec_rate.means(),
        ideal: s.ideal.loc.clone(),
        ideal_prec: s.ideal_prec.means(),
        coef: s.coef_loc.clone(),
        coef_center: s.coef_center.loc.clone(),
        coef_prec: s.coef_prec.means(),
        coef_prec_rate: s.coef_prec_rate.means(),
    }
}

/// Probability mass outside the symmetric normal HPD region that touches 0.
pub fn ccp_scalar(loc: f64, sd: f64) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() || !loc.is_finite() {
        return Err(domain(format!("ccp_scalar needs finite loc and sd > 0, got ({loc}, {sd})")));
    }
    // 2 (1 - Phi(z)) = erfc(z / sqrt 2), accurate far into the tail.
    Ok(erfc(loc.abs() / sd / std::f64::consts::SQRT_2).min(1.0))
}

/// Significance marker with strict thresholds.
pub fn star_label(ccp: f64) -> &'static str {
    if ccp < 0.001 {
        "***"
    } else if ccp < 0.01 {
        "**"
    } else if ccp < 0.05 {
        "*"
    } else if ccp < 0.1 {
        "·"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCcp {
    pub statistic: f64,
    pub df: usize,
    pub ccp: f64,
    pub degenerate: bool,
}

impl JointCcp {
    fn degenerate() -> Self {
        Self { statistic: 0.0, df: 0, ccp: 1.0, degenerate: true }
    }
}

/// Chi-square CCP for the contrast `C loc`. Rows of `C` that are identically
/// zero are dropped; the degrees of freedom are the numerical rank of
/// `C cov C^T`. A rank-deficient or empty contrast is flagged degenerate.
pub fn ccp_joint(c: &DMatrix<f64>, loc: &DVector<f64>, cov: &DMatrix<f64>) -> Result<JointCcp> {
    if c.ncols() != loc.len() || cov.nrows() != loc.len() || cov.ncols() != loc.len() {
        return Err(Error::Dimension("ccp_joint: contrast, loc and covariance disagree".into()));
    }
    let keep: Vec<usize> = (0..c.nrows()).filter(|&i| c.row(i).iter().any(|&x| x != 0.0)).collect();
    if keep.is_empty() {
        return Ok(JointCcp::degenerate());
    }
    let c = c.select_rows(&keep);
    let mid = &c * cov * c.transpose();
    let eig = mid.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = top * mid.nrows() as f64 * 1e-12;
    let rank = eig.eigenvalues.iter().filter(|&&e| e > tol).count();
    if rank < mid.nrows() || top <= 0.0 {
        return Ok(JointCcp::degenerate());
    }
    let cl = &c * loc;
    let chol = mid
        .cholesky()
        .ok_or_else(|| Error::Internal("contrast covariance not positive definite".into()))?;
    let q = cl.dot(&chol.solve(&cl)).max(0.0);
    let chi = ChiSquared::new(rank as f64).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(JointCcp { statistic: q, df: rank, ccp: chi.sf(q), degenerate: false })
}

/// Variational family handed to [`hpd_interval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Normal(NormalParams),
    Gamma(GammaParams),
}

/// Shortest interval holding `level` of the mass.
pub fn hpd_interval(f: &Family, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(domain(format!("hpd level must lie in (0, 1), got {level}")));
    }
    match f {
        Family::Normal(n) => {
            let sd = n.var.sqrt();
            let std = Normal::new(0.0, 1.0).map_err(|e| Error::Internal(e.to_string()))?;
            let z = std.inverse_cdf(0.5 * (1.0 + level));
            Ok((n.loc - z * sd, n.loc + z * sd))
        }
        Family::Gamma(g) => {
            let dist = Gamma::new(g.shape, g.rate).map_err(|e| domain(e.to_string()))?;
            if g.shape <= 1.0 {
                // Density is non-increasing, so the interval starts at 0.
                return Ok((0.0, dist.inverse_cdf(level)));
            }
            let width = |p: f64| dist.inverse_cdf(p + level) - dist.inverse_cdf(p);
            // Width is unimodal in the lower tail mass p; golden-section search.
            let (mut a, mut b) = (0.0, 1.0 - level);
            let r = 0.5 * (5f64.sqrt() - 1.0);
            let mut x1 = b - r * (b - a);
            let mut x2 = a + r * (b - a);
            let (mut f1, mut f2) = (width(x1), width(x2));
            while b - a > 1e-10 {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - r * (b - a);
                    f1 = width(x1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + r * (b - a);
                    f2 = width(x2);
                }
            }
            let p = 0.5 * (a + b);
            Ok((dist.inverse_cdf(p), dist.inverse_cdf(p + level)))
        }
    }
}

/// Per topic, the population variance of the products
/// `loc_eta[k, v] * loc_ideal[a, k]` over all (a, v) pairs.
pub fn topic_polarity(s: &VariationalState) -> Vec<f64> {
    let (k, v, a, kp) = (s.dims.topics, s.dims.terms, s.dims.authors, s.dims.position_topics);
    (0..k)
        .map(|t| {
            let eta = &s.polarity.loc[t * v..(t + 1) * v];
            let col = s.pos_col(t);
            let (mut mx, mut mx2) = (0.0, 0.0);
            for &x in eta {
                mx += x;
                mx2 += x * x;
            }
            let (mut my, mut my2) = (0.0, 0.0);
            for i in 0..a {
                let y = s.ideal.loc[i * kp + col];
                my += y;
                my2 += y * y;
            }
            let (nv, na) = (v as f64, a as f64);
            let val = (mx2 / nv) * (my2 / na) - (mx / nv * my / na).powi(2);
            val.max(0.0)
        })
        .collect()
}

/// A x K average topic intensity of each author's documents, given the
/// author index of every document.
pub fn author_topic_weights(s: &VariationalState, doc_authors: &[usize]) -> Result<Vec<f64>> {
    let k = s.dims.topics;
    if doc_authors.len() != s.dims.docs {
        return Err(Error::Dimension(format!("{} author entries for {} documents", doc_authors.len(), s.dims.docs)));
    }
    let mut by_author = vec![Vec::new(); s.dims.authors];
    for (d, &a) in doc_authors.iter().enumerate() {
        if a >= s.dims.authors {
            return Err(Error::Dimension(format!("document {d} has author {a} out of range")));
        }
        by_author[a].push(d);
    }
    let mut w = vec![0.0; s.dims.authors * k];
    for (a, docs) in by_author.iter().enumerate() {
        if docs.is_empty() {
            return Err(Error::Corpus(format!("author {a} has no documents")));
        }
        for &d in docs {
            for t in 0..k {
                w[a * k + t] += s.doc_topic.mean(d * k + t);
            }
        }
        let n = docs.len() as f64;
        w[a * k..(a + 1) * k].iter_mut().for_each(|x| *x /= n);
    }
    Ok(w)
}

/// Per author, the weighted average of the topic positions, normalized by the
/// total weight.
pub fn weighted_average_positions(s: &VariationalState, w: &[f64]) -> Result<Vec<f64>> {
    let (k, kp) = (s.dims.topics, s.dims.position_topics);
    if w.len() != s.dims.authors * k {
        return Err(Error::Dimension(format!("weights: {} != {}", w.len(), s.dims.authors * k)));
    }
    (0..s.dims.authors)
        .map(|a| {
            let row = &w[a * k..(a + 1) * k];
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return Err(domain(format!("author {a} has zero total topic weight")));
            }
            let num: f64 = (0..k).map(|t| row[t] * s.ideal.loc[a * kp + s.pos_col(t)]).sum();
            Ok(num / total)
        })
        .collect()
}

/// `psi(shape) - ln(rate) + i * loc_eta`.
pub fn corrected_log_intensity(shape: f64, rate: f64, loc_eta: f64, i: f64) -> f64 {
    digamma(shape) - rate.ln() + i * loc_eta
}

/// Corrected log intensities of topic `k` at position `i`, shifted by
/// `-min + 5% of range` so they are nonnegative.
pub fn corrected_log_intensities(s: &VariationalState, k: usize, i: f64) -> Vec<f64> {
    let v = s.dims.terms;
    let raw: Vec<f64> = (0..v)
        .map(|j| {
            let idx = k * v + j;
            corrected_log_intensity(
                s.topic_term.shape[idx],
                s.topic_term.rate[idx],
                s.polarity.loc[idx],
                i,
            )
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shift = -lo + 0.05 * (hi - lo);
    raw.into_iter().map(|x| x + shift).collect()
}

/// The `n` terms with the largest corrected intensity, descending; ties keep
/// the lower term id first.
pub fn top_terms(s: &VariationalState, k: usize, i: f64, n: usize) -> Vec<(usize, f64)> {
    let vals = corrected_log_intensities(s, k, i);
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).map(|j| (j, vals[j])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluentialDoc {
    pub doc: usize,
    pub chi: f64,
    /// Set when the counterfactual intensity had to be floored.
    pub clamped: bool,
}

/// Likelihood-ratio style influence of topic `k`'s ideological term on each
/// document, with posterior-mean plug-ins. Only the `pool_size` documents
/// with the largest topic intensity are scored; the `top_n` largest are
/// returned.
pub fn influential_docs(
    s: &VariationalState,
    m: &DocTermMatrix,
    k: usize,
    pool_size: usize,
    top_n: usize,
) -> Result<Vec<InfluentialDoc>> {
    if top_n == 0 || pool_size < top_n {
        return Err(domain(format!("need pool_size >= top_n >= 1, got {pool_size}, {top_n}")));
    }
    let (kk, v, kp) = (s.dims.topics, s.dims.terms, s.dims.position_topics);
    if k >= kk {
        return Err(domain(format!("topic {k} out of range")));
    }
    let theta = s.doc_topic.means();
    let beta = s.topic_term.means();
    let mut pool: Vec<usize> = (0..s.dims.docs).collect();
    pool.sort_by(|&a, &b| theta[b * kk + k].total_cmp(&theta[a * kk + k]).then(a.cmp(&b)));
    pool.truncate(pool_size);

    let mut out: Vec<InfluentialDoc> = pool
        .into_iter()
        .map(|d| {
            let a = m.author(d);
            let mut chi = 0.0;
            let mut clamped = false;
            for j in 0..v {
                let mut l1 = 0.0;
                for t in 0..kk {
                    let pos = s.ideal.loc[a * kp + s.pos_col(t)];
                    l1 += theta[d * kk + t] * beta[t * v + j] * (pos * s.polarity.loc[t * v + j]).exp();
                }
                let pos = s.ideal.loc[a * kp + s.pos_col(k)];
                let dif = theta[d * kk + k] * beta[k * v + j] * (1.0 - (pos * s.polarity.loc[k * v + j]).exp());
                let mut l0 = l1 + dif;
                if !(l0 > MIN_INTENSITY) {
                    l0 = MIN_INTENSITY;
                    clamped = true;
                }
                let y = m.get(d, j) as f64;
                if y > 0.0 {
                    chi += y * (l1 / l0).ln();
                }
                chi += dif;
            }
            InfluentialDoc { doc: d, chi: 2.0 * chi, clamped }
        })
        .collect();
    out.sort_by(|a, b| b.chi.total_cmp(&a.chi).then(a.doc.cmp(&b.doc)));
    out.truncate(top_n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    /// Position column: the topic, or 0 for shared positions.
    pub topic: usize,
    pub column: String,
    pub estimate: f64,
    pub se: f64,
    pub ccp: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTest {
    pub topic: usize,
    pub group: String,
    pub columns: Vec<String>,
    pub statistic: f64,
    pub df: usize,
    pub ccp: f64,
    pub label: String,
    pub degenerate: bool,
    /// Authors with a nonzero entry in any of the group's columns.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistGroup {
    pub level: String,
    pub counts: Vec<usize>,
    /// `None` for a level without authors.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub topic: usize,
    pub lo: f64,
    pub hi: f64,
    pub groups: Vec<HistGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub factor: String,
    pub level: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub coefficients: Vec<CoefRow>,
    pub groups: Vec<GroupTest>,
    pub histograms: Vec<PositionHistogram>,
    pub categories: Vec<CategoryCount>,
}

pub const ALL_INTERACTIONS: &str = "all interactions";

/// Coefficient table, joint tests, position histograms and category counts
/// for each position column.
pub fn regression_summary(
    s: &VariationalState,
    design: &DesignMatrix,
    main: Option<&str>,
    bins: usize,
) -> Result<RegressionSummary> {
    let l = s.dims.covariates;
    if design.num_columns() != l || design.num_authors() != s.dims.authors {
        return Err(Error::Dimension("design does not match the fitted state".into()));
    }
    if bins == 0 {
        return Err(domain("histogram needs at least one bin"));
    }
    let grouping = match main {
        Some(name) => Some(
            design
                .factor(name)
                .ok_or_else(|| Error::Config(format!("unknown main covariate `{name}`")))?,
        ),
        None => None,
    };
    let cov = s.coef_covariance();

    let mut groups: Vec<(String, Vec<usize>)> =
        design.term_groups.iter().map(|g| (g.name.clone(), g.columns.clone())).collect();
    let inter: Vec<usize> = design
        .term_groups
        .iter()
        .filter(|g| g.kind == TermKind::Interaction)
        .flat_map(|g| g.columns.iter().copied())
        .collect();
    if !inter.is_empty() {
        groups.push((ALL_INTERACTIONS.into(), inter));
    }

    let (a_n, kp) = (s.dims.authors, s.dims.position_topics);
    let mut out = RegressionSummary {
        coefficients: Vec::new(),
        groups: Vec::new(),
        histograms: Vec::new(),
        categories: Vec::new(),
    };
    for j in 0..kp {
        let loc = s.coef_row(j);
        for c in 0..l {
            let se = cov[(c, c)].sqrt();
            let ccp = ccp_scalar(loc[c], se)?;
            out.coefficients.push(CoefRow {
                topic: j,
                column: design.column_names[c].clone(),
                estimate: loc[c],
                se,
                ccp,
                label: star_label(ccp).into(),
            });
        }
        for (name, cols) in &groups {
            // Columns without any observation carry no information.
            let live: Vec<usize> =
                cols.iter().copied().filter(|&c| design.x.column(c).iter().any(|&x| x != 0.0)).collect();
            let mut contrast = DMatrix::zeros(cols.len(), l);
            for (r, &c) in cols.iter().enumerate() {
                if live.contains(&c) {
                    contrast[(r, c)] = 1.0;
                }
            }
            let jt = ccp_joint(&contrast, &loc, &cov)?;
            let count = (0..a_n).filter(|&a| cols.iter().any(|&c| design.x[(a, c)] != 0.0)).count();
            out.groups.push(GroupTest {
                topic: j,
                group: name.clone(),
                columns: cols.iter().map(|&c| design.column_names[c].clone()).collect(),
                statistic: jt.statistic,
                df: jt.df,
                ccp: jt.ccp,
                label: star_label(jt.ccp).into(),
                degenerate: jt.degenerate,
                count,
            });
        }

        let pos: Vec<f64> = (0..a_n).map(|a| s.ideal.loc[a * kp + j]).collect();
        let lo = pos.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bin_of = |x: f64| {
            if hi > lo {
                (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        };
        let levels: Vec<(String, Vec<usize>)> = match grouping {
            Some(f) => f
                .levels
                .iter()
                .enumerate()
                .map(|(li, name)| (name.clone(), (0..a_n).filter(|&a| f.codes[a] == li).collect()))
                .collect(),
            None => vec![("all".into(), (0..a_n).collect())],
        };
        let hist_groups = levels
            .into_iter()
            .map(|(level, members)| {
                let mut counts = vec![0; bins];
                for &a in &members {
                    counts[bin_of(pos[a])] += 1;
                }
                let mean = (!members.is_empty())
                    .then(|| members.iter().map(|&a| pos[a]).sum::<f64>() / members.len() as f64);
                HistGroup { level, counts, mean }
            })
            .collect();
        out.histograms.push(PositionHistogram { topic: j, lo, hi, groups: hist_groups });
    }
    for f in &design.factors {
        for (level, count) in f.levels.iter().zip(f.level_counts()) {
            out.categories.push(CategoryCount { factor: f.name.clone(), level: level.clone(), count });
        }
    }
    Ok(out)
}

/// Ranked terms of one topic at one ideological position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTerms {
    pub position: f64,
    pub terms: Vec<RankedTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub id: usize,
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAverage {
    pub level: String,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topic: usize,
    pub polarity: f64,
    pub rankings: Vec<RankedTerms>,
    /// Topic-weighted mean position of each level of the main covariate.
    pub group_averages: Vec<GroupAverage>,
    pub influential: Vec<InfluentialDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorPosition {
    pub author: usize,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub topics: Vec<TopicReport>,
    pub weighted_positions: Vec<AuthorPosition>,
    pub regression: RegressionSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSettings {
    pub top_n: usize,
    pub positions: Vec<f64>,
    pub pool_size: usize,
    pub influential: usize,
    pub bins: usize,
    pub main: Option<String>,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            top_n: 10,
            positions: vec![-1.0, 0.0, 1.0],
            pool_size: 100,
            influential: 10,
            bins: 20,
            main: None,
        }
    }
}

/// Data a report needs besides the fitted state. Without `counts` the
/// influential-document sections stay empty.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub design: &'a DesignMatrix,
    pub doc_authors: &'a [usize],
    /// External author ids, indexed by compacted author.
    pub author_ids: &'a [usize],
    /// Display label per compacted term.
    pub term_labels: &'a [String],
    pub counts: Option<&'a DocTermMatrix>,
}

pub fn build_report(s: &VariationalState, inp: &ReportInputs, cfg: &ReportSettings) -> Result<Report> {
    let design = inp.design;
    if inp.term_labels.len() != s.dims.terms || inp.author_ids.len() != s.dims.authors {
        return Err(Error::Dimension("term labels or author ids do not match the state".into()));
    }
    let regression = regression_summary(s, design, cfg.main.as_deref(), cfg.bins)?;
    let polarity = topic_polarity(s);
    let w = author_topic_weights(s, inp.doc_authors)?;
    let weighted = weighted_average_positions(s, &w)?;
    let factor = match &cfg.main {
        Some(name) => design.factor(name),
        None => None,
    };
    let (k, kp) = (s.dims.topics, s.dims.position_topics);
    let pool = cfg.pool_size.min(s.dims.docs);
    let top = cfg.influential.min(pool);
    let mut topics = Vec::with_capacity(k);
    for t in 0..k {
        let rankings = cfg
            .positions
            .iter()
            .map(|&i| RankedTerms {
                position: i,
                terms: top_terms(s, t, i, cfg.top_n)
                    .into_iter()
                    .map(|(id, value)| RankedTerm { id, label: inp.term_labels[id].clone(), value })
                    .collect(),
            })
            .collect();
        let group_averages = match factor {
            Some(f) => f
                .levels
                .iter()
                .enumerate()
                .map(|(li, level)| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for a in (0..s.dims.authors).filter(|&a| f.codes[a] == li) {
                        num += w[a * k + t] * s.ideal.loc[a * kp + s.pos_col(t)];
                        den += w[a * k + t];
                    }
                    GroupAverage { level: level.clone(), mean: (den > 0.0).then(|| num / den) }
                })
                .collect(),
            None => Vec::new(),
        };
        let influential = match inp.counts {
            Some(m) if top > 0 => influential_docs(s, m, t, pool, top)?,
            _ => Vec::new(),
        };
        topics.push(TopicReport { topic: t, polarity: polarity[t], rankings, group_averages, influential });
    }
    Ok(Report {
        schema: REPORT_SCHEMA.into(),
        topics,
        weighted_positions: weighted
            .into_iter()
            .enumerate()
            .map(|(a, p)| AuthorPosition { author: inp.author_ids[a], position: p })
            .collect(),
        regression,
    })
}

/// Report sections that can be written on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Polarity,
    Positions,
    Terms,
    Regression,
    Influential,
}

impl Section {
    pub const ALL: [Section; 5] =
        [Section::Polarity, Section::Positions, Section::Terms, Section::Regression, Section::Influential];
}

/// CSV files that carry the data of each summary figure.
pub fn write_plot_data(report: &Report, s: &VariationalState, dir: &Path) -> Result<()> {
    for sec in Section::ALL {
        write_section(report, s, dir, sec)?;
    }
    Ok(())
}

pub fn write_section(report: &Report, s: &VariationalState, dir: &Path, sec: Section) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match sec {
        Section::Polarity => write_polarity(report, dir),
        Section::Positions => write_positions(report, s, dir),
        Section::Terms => write_terms(report, dir),
        Section::Regression => write_regression(report, dir),
        Section::Influential => write_influential(report, dir),
    }
}

fn write_polarity(report: &Report, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("polarity.csv"))?;
    w.write_record(["topic", "polarity"])?;
    for t in &report.topics {
        w.write_record([t.topic.to_string(), fmt(t.polarity)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_positions(report: &Report, s: &VariationalState, dir: &Path) -> Result<()> {
    let kp = s.dims.position_topics;
    let mut w = csv::Writer::from_path(dir.join("positions.csv"))?;
    w.write_record(["author", "topic", "position", "variance"])?;
    for a in 0..s.dims.authors {
        for j in 0..kp {
            let i = a * kp + j;
            w.write_record([a.to_string(), j.to_string(), fmt(s.ideal.loc[i]), fmt(s.ideal.var(i))])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("weighted_positions.csv"))?;
    w.write_record(["author", "position"])?;
    for p in &report.weighted_positions {
        w.write_record([p.author.to_string(), fmt(p.position)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("group_means.csv"))?;
    w.write_record(["topic", "level", "mean"])?;
    for t in &report.topics {
        for g in &t.group_averages {
            w.write_record([t.topic.to_string(), g.level.clone(), fmt_opt(g.mean)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_terms(report: &Report, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("terms.csv"))?;
    w.write_record(["topic", "position", "rank", "term_id", "term", "value"])?;
    for t in &report.topics {
        for r in &t.rankings {
            for (rank, term) in r.terms.iter().enumerate() {
                w.write_record([
                    t.topic.to_string(),
                    fmt(r.position),
                    (rank + 1).to_string(),
                    term.id.to_string(),
                    term.label.clone(),
                    fmt(term.value),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_regression(report: &Report, dir: &Path) -> Result<()> {
    let reg = &report.regression;
    let mut w = csv::Writer::from_path(dir.join("regression.csv"))?;
    w.write_record(["topic", "term", "kind", "estimate", "se", "statistic", "df", "ccp", "label", "degenerate", "count"])?;
    for c in &reg.coefficients {
        w.write_record([
            c.topic.to_string(),
            c.column.clone(),
            "coefficient".into(),
            fmt(c.estimate),
            fmt(c.se),
            String::new(),
            "1".into(),
            fmt(c.ccp),
            c.label.clone(),
            "false".into(),
            String::new(),
        ])?;
    }
    for g in &reg.groups {
        w.write_record([
            g.topic.to_string(),
            g.group.clone(),
            "group".into(),
            String::new(),
            String::new(),
            fmt(g.statistic),
            g.df.to_string(),
            fmt(g.ccp),
            g.label.clone(),
            g.degenerate.to_string(),
            g.count.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("histograms.csv"))?;
    w.write_record(["topic", "level", "bin", "lo", "hi", "count", "group_mean"])?;
    for h in &reg.histograms {
        let nb = h.groups.first().map_or(0, |g| g.counts.len());
        let width = (h.hi - h.lo) / nb.max(1) as f64;
        for g in &h.groups {
            for (b, c) in g.counts.iter().enumerate() {
                w.write_record([
                    h.topic.to_string(),
                    g.level.clone(),
                    b.to_string(),
                    fmt(h.lo + b as f64 * width),
                    fmt(h.lo + (b + 1) as f64 * width),
                    c.to_string(),
                    fmt_opt(g.mean),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("categories.csv"))?;
    w.write_record(["factor", "level", "count"])?;
    for c in &reg.categories {
        w.write_record([c.factor.clone(), c.level.clone(), c.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_influential(report: &Report, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("influential.csv"))?;
    w.write_record(["topic", "rank", "doc", "chi", "clamped"])?;
    for t in &report.topics {
        for (r, d) in t.influential.iter().enumerate() {
            w.write_record([t.topic.to_string(), (r + 1).to_string(), d.doc.to_string(), fmt(d.chi), d.clamped.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn fmt(x: f64) -> String {
    // Shortest round-trip representation keeps outputs byte-stable.
    format!("{x}")
}
