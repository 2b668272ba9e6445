//! Hierarchical Poisson factorization warm start: full-batch coordinate
//! ascent on the model with the ideological factor fixed at one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::error::{Error, Result};
use crate::inference::{
    allocation_probs, apply_local_theta, author_topic_sums, exact_elbo, update_author_rates,
    update_local_theta, update_term_rates, update_topic_terms, Batch, Ideology, TermMoments,
};
use crate::model::Hyperparams;
use crate::state::{AdamMoments, AdamState, BoundedNormalBlock, Dims, GammaBlock, NormalBlock, VariationalState};

/// RNG stream used for the initial jitter.
const JITTER_STREAM: u64 = 0;
const JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct HpfFit {
    /// docs x topics.
    pub doc_topic: GammaBlock,
    pub author_rate: GammaBlock,
    /// topics x terms.
    pub topic_term: GammaBlock,
    pub term_rate: GammaBlock,
    /// Objective after every sweep.
    pub trace: Vec<f64>,
}

fn jittered<R: Rng>(rng: &mut R, n: usize, shape: f64, rate: f64) -> GammaBlock {
    let mut g = GammaBlock::filled(n, shape, rate);
    for i in 0..n {
        g.shape[i] *= 1.0 + rng.random_range(-JITTER..JITTER);
        g.rate[i] *= 1.0 + rng.random_range(-JITTER..JITTER);
    }
    g
}

/// State holding only the Poisson factorization blocks; the ideology
/// blocks are single placeholders that pinned updates never read.
fn poisson_state(doc_topic: GammaBlock, author_rate: GammaBlock, topic_term: GammaBlock, term_rate: GammaBlock, dims: Dims) -> VariationalState {
    VariationalState {
        dims,
        doc_topic,
        author_rate,
        topic_term,
        term_rate,
        polarity: BoundedNormalBlock { loc: Vec::new(), var_logit: Vec::new() },
        polarity_prec: GammaBlock::filled(0, 1.0, 1.0),
        polarity_prec_rate: GammaBlock::filled(0, 1.0, 1.0),
        ideal: BoundedNormalBlock { loc: Vec::new(), var_logit: Vec::new() },
        ideal_prec: GammaBlock::filled(0, 1.0, 1.0),
        coef_loc: Vec::new(),
        coef_chol: Vec::new(),
        coef_center: NormalBlock::filled(0, 0.0, 1.0),
        coef_prec: GammaBlock::filled(0, 1.0, 1.0),
        coef_prec_rate: GammaBlock::filled(0, 1.0, 1.0),
        adam: AdamState {
            polarity_loc: AdamMoments::zeros(0),
            polarity_var: AdamMoments::zeros(0),
            ideal_loc: AdamMoments::zeros(0),
            ideal_var: AdamMoments::zeros(0),
        },
        step: 0,
    }
}

/// Runs `iters` sweeps of allocation, document intensities, author rates,
/// topic-term intensities and term rates.
pub fn fit_hpf(m: &DocTermMatrix, num_topics: usize, hyper: &Hyperparams, iters: usize, seed: u64) -> Result<HpfFit> {
    hyper.validate()?;
    m.validate()?;
    if num_topics == 0 {
        return Err(Error::Config("num_topics must be >= 1".into()));
    }
    let (d_n, v_n, a_n, k_n) = (m.num_docs(), m.num_terms(), m.num_authors(), num_topics);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(JITTER_STREAM);
    let doc_topic = jittered(&mut rng, d_n * k_n, hyper.doc_topic_shape, hyper.author_rate_mean);
    let author_rate = jittered(&mut rng, a_n, hyper.author_rate_shape, hyper.author_rate_rate());
    let topic_term = jittered(&mut rng, k_n * v_n, hyper.topic_term_shape, hyper.term_rate_mean);
    let term_rate = jittered(&mut rng, v_n, hyper.term_rate_shape, hyper.term_rate_rate());
    let dims = Dims {
        docs: d_n,
        terms: v_n,
        topics: k_n,
        authors: a_n,
        covariates: 0,
        position_topics: 1,
    };
    let mut s = poisson_state(doc_topic, author_rate, topic_term, term_rate, dims);
    let batch = Batch::full(m)?;
    let design = DesignMatrix::intercept_only(a_n);
    let mut trace = Vec::with_capacity(iters);
    for it in 0..iters {
        let tm = TermMoments::new(&s);
        let alloc = allocation_probs(&s, m, &batch, Ideology::Pinned, &tm);
        let sums = author_topic_sums(&s, Ideology::Pinned, &batch.authors, &tm);
        let local = update_local_theta(&s, m, &batch, &alloc, &sums, hyper);
        apply_local_theta(&mut s, &batch, &local);
        let p = update_author_rates(&s, m, &batch, hyper);
        s.author_rate = p;
        let p = update_topic_terms(&s, m, &batch, &alloc, Ideology::Pinned, hyper);
        s.topic_term = p;
        let p = update_term_rates(&s, hyper);
        s.term_rate = p;
        let elbo = exact_elbo(&s, m, &design, hyper, Ideology::Pinned)
            .map_err(|_| Error::NonFinite { term: "poisson factorization".into(), step: it as u64 + 1 })?;
        trace.push(elbo.total());
    }
    Ok(HpfFit {
        doc_topic: s.doc_topic,
        author_rate: s.author_rate,
        topic_term: s.topic_term,
        term_rate: s.term_rate,
        trace,
    })
}
