//! Ancestral sampling from the full generative model, with optional pinned
//! blocks, and comparison of a fitted state against the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::error::{Error, Result};
use crate::math::{pearson, sample_gamma_raw};
use crate::model::Hyperparams;
use crate::state::VariationalState;

/// Rates above this abort the draw.
pub const MAX_RATE: f64 = 1e9;

/// Every latent value of one draw. Matrices are row-major: `doc_topic`
/// docs x topics, `topic_term` and `polarity` topics x terms, `ideal`
/// authors x topics, `coef` topics x covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub num_docs: usize,
    pub num_terms: usize,
    pub num_topics: usize,
    pub num_authors: usize,
    pub num_covariates: usize,
    pub doc_author: Vec<usize>,
    pub doc_topic: Vec<f64>,
    pub topic_term: Vec<f64>,
    pub polarity: Vec<f64>,
    pub ideal: Vec<f64>,
    pub coef: Vec<f64>,
    pub ideal_prec: Vec<f64>,
    pub author_rate: Vec<f64>,
    pub term_rate: Vec<f64>,
    pub polarity_prec: Vec<f64>,
    pub polarity_prec_rate: Vec<f64>,
    pub coef_center: Vec<f64>,
    pub coef_prec: Vec<f64>,
    pub coef_prec_rate: Vec<f64>,
    pub seed: u64,
}

impl GroundTruth {
    /// Poisson rate of cell `(d, v)`.
    pub fn rate(&self, d: usize, v: usize) -> f64 {
        let (k_n, v_n) = (self.num_topics, self.num_terms);
        let a = self.doc_author[d];
        (0..k_n)
            .map(|k| {
                self.doc_topic[d * k_n + k]
                    * self.topic_term[k * v_n + v]
                    * (self.polarity[k * v_n + v] * self.ideal[a * k_n + k]).exp()
            })
            .sum()
    }
}

/// Blocks to fix instead of drawing. Pinned values replace the draw and
/// feed every downstream block.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub doc_author: Option<Vec<usize>>,
    pub doc_topic: Option<Vec<f64>>,
    pub topic_term: Option<Vec<f64>>,
    pub polarity: Option<Vec<f64>>,
    /// Either authors x topics, or one value per author used for every topic.
    pub ideal: Option<Vec<f64>>,
    pub coef: Option<Vec<f64>>,
}

/// A truth with well separated topics: topic k owns a contiguous block of
/// terms, every document has one dominant topic (`doc % K`), and polarity
/// values are nonzero only on a topic's own block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    /// Topic-term intensity outside a topic's own block.
    pub off_block: f64,
    /// Scale of the uniform intensity of non-dominant topics.
    pub minor_share: f64,
    /// Standard deviation of the polarity values on the own block.
    pub polarity_sd: f64,
}

impl Default for BlockTruth {
    fn default() -> Self {
        Self { off_block: 0.02, minor_share: 0.1, polarity_sd: 0.7 }
    }
}

impl BlockTruth {
    /// Overrides for `doc_topic`, `topic_term` and `polarity`.
    pub fn overrides(&self, num_docs: usize, num_terms: usize, num_topics: usize, seed: u64) -> Overrides {
        let (d, v, k) = (num_docs, num_terms, num_topics);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let own = |t: usize, j: usize| j * k / v == t;
        let topic_term: Vec<f64> = (0..k * v)
            .map(|i| if own(i / v, i % v) { rng.random_range(0.5..1.5) } else { self.off_block })
            .collect();
        let polarity: Vec<f64> = (0..k * v)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                if own(i / v, i % v) {
                    self.polarity_sd * z
                } else {
                    0.0
                }
            })
            .collect();
        let doc_topic: Vec<f64> = (0..d * k)
            .map(|i| {
                if (i / k) % k == i % k {
                    rng.random_range(0.5..1.5)
                } else {
                    self.minor_share * rng.random_range(0.0..1.0)
                }
            })
            .collect();
        Overrides {
            doc_topic: Some(doc_topic),
            topic_term: Some(topic_term),
            polarity: Some(polarity),
            ..Overrides::default()
        }
    }
}

/// Tracks which blocks exist so that every draw can assert its parents.
struct Drawn(Vec<&'static str>);

impl Drawn {
    fn mark(&mut self, name: &'static str, parents: &[&str]) {
        for p in parents {
            assert!(self.0.contains(p), "{name} drawn before its parent {p}");
        }
        self.0.push(name);
    }
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("override {name}: expected {n} values, found {}", v.len())));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    hyper: &Hyperparams,
    num_docs: usize,
    num_terms: usize,
    num_topics: usize,
    num_authors: usize,
    design: &DesignMatrix,
    seed: u64,
    overrides: &Overrides,
) -> Result<(DocTermMatrix, GroundTruth)> {
    hyper.validate()?;
    let (d_n, v_n, k_n, a_n) = (num_docs, num_terms, num_topics, num_authors);
    if d_n == 0 || v_n == 0 || k_n == 0 || a_n == 0 {
        return Err(Error::Config("all dimensions must be positive".into()));
    }
    if design.num_authors() != a_n {
        return Err(Error::Dimension(format!("design has {} rows for {a_n} authors", design.num_authors())));
    }
    let l_n = design.num_columns();
    let doc_author = match &overrides.doc_author {
        Some(m) => {
            if m.len() != d_n || m.iter().any(|&a| a >= a_n) {
                return Err(Error::Dimension("author override does not match the dimensions".into()));
            }
            m.clone()
        }
        None => (0..d_n).map(|d| d % a_n).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = Drawn(Vec::new());
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // Regression hierarchy and positions.
    drawn.mark("coef_prec_rate", &[]);
    let coef_prec_rate: Vec<f64> = (0..l_n)
        .map(|_| sample_gamma_raw(hyper.coef_prec_rate_shape, hyper.coef_prec_rate_rate(), &mut rng))
        .collect();
    drawn.mark("coef_prec", &["coef_prec_rate"]);
    let coef_prec: Vec<f64> = coef_prec_rate
        .iter()
        .map(|&b| sample_gamma_raw(hyper.coef_prec_shape, b, &mut rng))
        .collect();
    drawn.mark("coef_center", &[]);
    let coef_center: Vec<f64> = (0..l_n).map(|_| normal(&mut rng)).collect();
    drawn.mark("coef", &["coef_center", "coef_prec"]);
    let coef = match &overrides.coef {
        Some(c) => {
            check_len("coef", c, k_n * l_n)?;
            c.clone()
        }
        None => (0..k_n * l_n)
            .map(|i| {
                let l = i % l_n;
                coef_center[l] + normal(&mut rng) / coef_prec[l].sqrt()
            })
            .collect(),
    };
    drawn.mark("ideal_prec", &[]);
    let ideal_prec: Vec<f64> = (0..a_n)
        .map(|_| sample_gamma_raw(hyper.ideal_prec_shape, hyper.ideal_prec_rate, &mut rng))
        .collect();
    drawn.mark("ideal", &["coef", "ideal_prec"]);
    let ideal = match &overrides.ideal {
        Some(p) if p.len() == a_n => (0..a_n * k_n).map(|i| p[i / k_n]).collect(),
        Some(p) => {
            check_len("ideal", p, a_n * k_n)?;
            p.clone()
        }
        None => {
            let mut out = vec![0.0; a_n * k_n];
            for a in 0..a_n {
                for k in 0..k_n {
                    let mean: f64 = (0..l_n).map(|l| design.x[(a, l)] * coef[k * l_n + l]).sum();
                    out[a * k_n + k] = mean + normal(&mut rng) / ideal_prec[a].sqrt();
                }
            }
            out
        }
    };

    // Polarity values.
    drawn.mark("polarity_prec_rate", &[]);
    let polarity_prec_rate: Vec<f64> = (0..k_n)
        .map(|_| sample_gamma_raw(hyper.polarity_prec_rate_shape, hyper.polarity_prec_rate_rate(), &mut rng))
        .collect();
    drawn.mark("polarity_prec", &["polarity_prec_rate"]);
    let polarity_prec: Vec<f64> = polarity_prec_rate
        .iter()
        .map(|&b| sample_gamma_raw(hyper.polarity_prec_shape, b, &mut rng))
        .collect();
    drawn.mark("polarity", &["polarity_prec"]);
    let polarity = match &overrides.polarity {
        Some(p) => {
            check_len("polarity", p, k_n * v_n)?;
            p.clone()
        }
        None => (0..k_n * v_n)
            .map(|i| normal(&mut rng) / polarity_prec[i / v_n].sqrt())
            .collect(),
    };

    // Document and term intensities.
    drawn.mark("author_rate", &[]);
    let author_rate: Vec<f64> = (0..a_n)
        .map(|_| sample_gamma_raw(hyper.author_rate_shape, hyper.author_rate_rate(), &mut rng))
        .collect();
    drawn.mark("doc_topic", &["author_rate"]);
    let doc_topic = match &overrides.doc_topic {
        Some(t) => {
            check_len("doc_topic", t, d_n * k_n)?;
            t.clone()
        }
        None => (0..d_n * k_n)
            .map(|i| sample_gamma_raw(hyper.doc_topic_shape, author_rate[doc_author[i / k_n]], &mut rng))
            .collect(),
    };
    drawn.mark("term_rate", &[]);
    let term_rate: Vec<f64> = (0..v_n)
        .map(|_| sample_gamma_raw(hyper.term_rate_shape, hyper.term_rate_rate(), &mut rng))
        .collect();
    drawn.mark("topic_term", &["term_rate"]);
    let topic_term = match &overrides.topic_term {
        Some(b) => {
            check_len("topic_term", b, k_n * v_n)?;
            b.clone()
        }
        None => (0..k_n * v_n)
            .map(|i| sample_gamma_raw(hyper.topic_term_shape, term_rate[i % v_n], &mut rng))
            .collect(),
    };

    let truth = GroundTruth {
        num_docs: d_n,
        num_terms: v_n,
        num_topics: k_n,
        num_authors: a_n,
        num_covariates: l_n,
        doc_author: doc_author.clone(),
        doc_topic,
        topic_term,
        polarity,
        ideal,
        coef,
        ideal_prec,
        author_rate,
        term_rate,
        polarity_prec,
        polarity_prec_rate,
        coef_center,
        coef_prec,
        coef_prec_rate,
        seed,
    };

    drawn.mark("counts", &["doc_topic", "topic_term", "polarity", "ideal"]);
    let mut triplets = Vec::new();
    for d in 0..d_n {
        for v in 0..v_n {
            let lambda = truth.rate(d, v);
            if !(lambda <= MAX_RATE) {
                return Err(Error::Domain(format!(
                    "degenerate draw: rate {lambda:e} at document {d}, term {v}; try another seed"
                )));
            }
            if lambda <= 0.0 {
                continue;
            }
            let y: f64 = Poisson::new(lambda)
                .map_err(|e| Error::Internal(format!("poisson rate {lambda}: {e}")))?
                .sample(&mut rng);
            if y > 0.0 {
                triplets.push((d, v, y as u32));
            }
        }
    }
    let m = DocTermMatrix::from_triplets(d_n, v_n, &triplets, doc_author)?;
    Ok((m, truth))
}

/// Agreement between a fitted state and the truth. Correlations are `None`
/// when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub ideal_corr: Option<f64>,
    pub polarity_corr: Option<f64>,
    /// One entry per covariate column.
    pub coef_corr: Vec<Option<f64>>,
    /// Share of polarity values with `|truth| > 0.5` whose estimate has the
    /// same sign.
    pub polarity_sign_agreement: Option<f64>,
    pub coef_rmse: f64,
}

impl RecoveryReport {
    pub fn format_corr(c: Option<f64>) -> String {
        match c {
            Some(v) => format!("{v:.4}"),
            None => "n/a".into(),
        }
    }
}

/// Fitted topic matched to each true topic, maximizing the summed
/// correlation of topic-term intensities. Exhaustive for up to 8 topics,
/// greedy beyond.
pub fn match_topics(truth: &GroundTruth, s: &VariationalState) -> Vec<usize> {
    let (k_n, v_n) = (truth.num_topics, truth.num_terms);
    let est = s.topic_term.means();
    let score: Vec<Vec<f64>> = (0..k_n)
        .map(|t| {
            (0..k_n)
                .map(|e| {
                    pearson(&truth.topic_term[t * v_n..(t + 1) * v_n], &est[e * v_n..(e + 1) * v_n]).unwrap_or(0.0)
                })
                .collect()
        })
        .collect();
    if k_n <= 8 {
        let mut best = (f64::NEG_INFINITY, (0..k_n).collect::<Vec<_>>());
        let mut perm: Vec<usize> = (0..k_n).collect();
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(t, &e)| score[t][e]).sum();
            if total > best.0 {
                best = (total, p.to_vec());
            }
        });
        return best.1;
    }
    let mut out = vec![usize::MAX; k_n];
    let mut used = vec![false; k_n];
    let mut pairs: Vec<(usize, usize)> = (0..k_n).flat_map(|t| (0..k_n).map(move |e| (t, e))).collect();
    pairs.sort_by(|a, b| score[b.0][b.1].total_cmp(&score[a.0][a.1]));
    for (t, e) in pairs {
        if out[t] == usize::MAX && !used[e] {
            out[t] = e;
            used[e] = true;
        }
    }
    out
}

fn permute(p: &mut [usize], i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

/// Compares estimated means with the truth after matching topics with
/// [`match_topics`]. Signs are taken as given (anchored runs are not flipped
/// afterwards). A state with shared positions is compared after repeating
/// its single column.
pub fn recovery_metrics(truth: &GroundTruth, s: &VariationalState) -> Result<RecoveryReport> {
    let d = s.dims;
    if d.terms != truth.num_terms
        || d.topics != truth.num_topics
        || d.authors != truth.num_authors
        || d.covariates != truth.num_covariates
    {
        return Err(Error::Dimension("state and truth dimensions differ".into()));
    }
    let (k_n, v_n) = (d.topics, d.terms);
    let perm = match_topics(truth, s);
    let est_ideal: Vec<f64> = (0..d.authors * k_n)
        .map(|i| s.ideal.loc[(i / k_n) * d.position_topics + s.pos_col(perm[i % k_n])])
        .collect();
    let ideal_corr = pearson(&truth.ideal, &est_ideal);
    let est_polarity: Vec<f64> = (0..k_n * v_n).map(|i| s.polarity.loc[perm[i / v_n] * v_n + i % v_n]).collect();
    let polarity_corr = pearson(&truth.polarity, &est_polarity);
    let l_n = d.covariates;
    let est_coef: Vec<f64> = (0..k_n * l_n)
        .map(|i| s.coef_loc[s.pos_col(perm[i / l_n]) * l_n + i % l_n])
        .collect();
    let coef_corr = (0..l_n)
        .map(|l| {
            let t: Vec<f64> = (0..k_n).map(|k| truth.coef[k * l_n + l]).collect();
            let e: Vec<f64> = (0..k_n).map(|k| est_coef[k * l_n + l]).collect();
            pearson(&t, &e)
        })
        .collect();
    let strong: Vec<usize> = (0..truth.polarity.len()).filter(|&i| truth.polarity[i].abs() > 0.5).collect();
    let polarity_sign_agreement = if strong.is_empty() {
        None
    } else {
        let hits = strong
            .iter()
            .filter(|&&i| truth.polarity[i].signum() == est_polarity[i].signum())
            .count();
        Some(hits as f64 / strong.len() as f64)
    };
    let coef_rmse = if est_coef.is_empty() {
        0.0
    } else {
        (truth
            .coef
            .iter()
            .zip(&est_coef)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / est_coef.len() as f64)
            .sqrt()
    };
    Ok(RecoveryReport {
        ideal_corr,
        polarity_corr,
        coef_corr,
        polarity_sign_agreement,
        coef_rmse,
    })
}
