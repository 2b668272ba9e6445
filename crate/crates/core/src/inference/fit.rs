use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::elbo::exact_elbo;
use super::stochastic::{apply_gradients, reparam_gradients, Draws};
use super::updates::{
    allocation_probs, apply_local_theta, author_topic_sums, update_globals, update_local_theta, Batch,
    Ideology, TermMoments,
};
use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::error::{Error, Result};
use crate::hpf::{fit_hpf, HpfFit};
use crate::math::step_size;
use crate::model::{FitConfig, Hyperparams};
use crate::state::{AdamMoments, AdamState, BoundedNormalBlock, Dims, GammaBlock, NormalBlock, VariationalState};

/// RNG stream used for the initial polarity draws.
const INIT_STREAM: u64 = 1;
/// RNG stream used for batch order and Monte Carlo draws.
const FIT_STREAM: u64 = 2;

/// Initial variance of polarity values and positions.
const INIT_VAR: f64 = 0.25;
const INIT_POLARITY_SD: f64 = 0.01;
const INIT_COEF_SD: f64 = 0.1;

/// Starting state from a Poisson factorization warm start: positions at
/// their anchors, small random polarity values and prior-mean precisions.
pub fn init_state(
    hpf: &HpfFit,
    anchors: &[f64],
    design: &DesignMatrix,
    hyper: &Hyperparams,
    cfg: &FitConfig,
) -> Result<VariationalState> {
    hyper.validate()?;
    cfg.validate()?;
    let k_n = cfg.num_topics;
    let a_n = hpf.author_rate.len();
    let v_n = hpf.term_rate.len();
    if hpf.topic_term.len() != k_n * v_n {
        return Err(Error::Dimension(format!(
            "warm start has {} topic-term entries, expected {}",
            hpf.topic_term.len(),
            k_n * v_n
        )));
    }
    if anchors.len() != a_n {
        return Err(Error::Dimension(format!("{} anchors for {a_n} authors", anchors.len())));
    }
    if design.num_authors() != a_n {
        return Err(Error::Dimension(format!(
            "design has {} rows for {a_n} authors",
            design.num_authors()
        )));
    }
    let kp = cfg.position_topics();
    let l_n = design.num_columns();
    let dims = Dims {
        docs: hpf.doc_topic.len() / k_n,
        terms: v_n,
        topics: k_n,
        authors: a_n,
        covariates: l_n,
        position_topics: kp,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    let polarity_loc: Vec<f64> = (0..k_n * v_n)
        .map(|_| INIT_POLARITY_SD * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let ideal_loc: Vec<f64> = (0..a_n).flat_map(|a| std::iter::repeat_n(anchors[a], kp)).collect();
    let mut coef_chol = vec![0.0; l_n * l_n];
    for l in 0..l_n {
        coef_chol[l * l_n + l] = INIT_COEF_SD;
    }
    let s = VariationalState {
        dims,
        doc_topic: hpf.doc_topic.clone(),
        author_rate: hpf.author_rate.clone(),
        topic_term: hpf.topic_term.clone(),
        term_rate: hpf.term_rate.clone(),
        polarity: BoundedNormalBlock::new(polarity_loc, INIT_VAR)?,
        polarity_prec: GammaBlock::filled(
            k_n,
            hyper.polarity_prec_shape,
            hyper.polarity_prec_rate_shape / hyper.polarity_prec_rate_rate(),
        ),
        polarity_prec_rate: GammaBlock::filled(k_n, hyper.polarity_prec_rate_shape, hyper.polarity_prec_rate_rate()),
        ideal: BoundedNormalBlock::new(ideal_loc, INIT_VAR)?,
        ideal_prec: GammaBlock::filled(a_n, hyper.ideal_prec_shape, hyper.ideal_prec_rate),
        coef_loc: vec![0.0; kp * l_n],
        coef_chol,
        coef_center: NormalBlock::filled(l_n, 0.0, 1.0),
        coef_prec: GammaBlock::filled(
            l_n,
            hyper.coef_prec_shape,
            hyper.coef_prec_rate_shape / hyper.coef_prec_rate_rate(),
        ),
        coef_prec_rate: GammaBlock::filled(l_n, hyper.coef_prec_rate_shape, hyper.coef_prec_rate_rate()),
        adam: AdamState {
            polarity_loc: AdamMoments::zeros(k_n * v_n),
            polarity_var: AdamMoments::zeros(k_n * v_n),
            ideal_loc: AdamMoments::zeros(a_n * kp),
            ideal_var: AdamMoments::zeros(a_n * kp),
        },
        step: 0,
    };
    s.validate()?;
    Ok(s)
}

/// Drives mini-batch steps over epochs. The RNG position and epoch count
/// are exposed so that a run can be checkpointed and resumed exactly.
pub struct Fitter<'a> {
    m: &'a DocTermMatrix,
    design: &'a DesignMatrix,
    hyper: Hyperparams,
    cfg: FitConfig,
    pub state: VariationalState,
    rng: ChaCha8Rng,
    pub epochs_done: usize,
    /// One objective value per step.
    pub trace: Vec<f64>,
}

impl<'a> Fitter<'a> {
    pub fn new(
        m: &'a DocTermMatrix,
        design: &'a DesignMatrix,
        hyper: Hyperparams,
        cfg: FitConfig,
        state: VariationalState,
    ) -> Result<Self> {
        hyper.validate()?;
        cfg.validate()?;
        m.validate()?;
        state.validate()?;
        let d = state.dims;
        if d.docs != m.num_docs() || d.terms != m.num_terms() || d.authors != m.num_authors() {
            return Err(Error::Dimension(format!(
                "state is {}x{} with {} authors, corpus is {}x{} with {} authors",
                d.docs,
                d.terms,
                d.authors,
                m.num_docs(),
                m.num_terms(),
                m.num_authors()
            )));
        }
        if d.topics != cfg.num_topics || d.position_topics != cfg.position_topics() {
            return Err(Error::Dimension("state topics do not match the configuration".into()));
        }
        if design.num_authors() != d.authors || design.num_columns() != d.covariates {
            return Err(Error::Dimension("design matrix does not match the state".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(FIT_STREAM);
        Ok(Self {
            m,
            design,
            hyper,
            cfg,
            state,
            rng,
            epochs_done: 0,
            trace: Vec::new(),
        })
    }

    /// Restores the RNG position and epoch count of an interrupted run.
    pub fn resume_at(&mut self, word_pos: u128, epochs_done: usize) {
        self.rng.set_word_pos(word_pos);
        self.epochs_done = epochs_done;
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn config(&self) -> &FitConfig {
        &self.cfg
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// One step on the given documents. On a non-finite result the state
    /// is rolled back and the error names the offending block.
    pub fn step(&mut self, docs: Vec<usize>) -> Result<f64> {
        let batch = Batch::new(self.m, docs)?;
        let snapshot = self.state.clone();
        match self.step_inner(&batch) {
            Ok(v) => Ok(v),
            Err(e) => {
                self.state = snapshot;
                Err(e)
            }
        }
    }

    fn step_inner(&mut self, batch: &Batch) -> Result<f64> {
        let ideology = Ideology::Active(self.cfg.expectation);
        let s = &mut self.state;
        s.step += 1;
        let rho = step_size(s.step, self.cfg.step_delay, self.cfg.step_exponent)?;
        let tm = TermMoments::new(s);
        let alloc = allocation_probs(s, self.m, batch, ideology, &tm);
        let sums = author_topic_sums(s, ideology, &batch.authors, &tm);
        let local = update_local_theta(s, self.m, batch, &alloc, &sums, &self.hyper);
        apply_local_theta(s, batch, &local);
        update_globals(s, self.m, self.design, batch, &alloc, ideology, &self.hyper, rho)?;
        let value = if self.cfg.freeze_ideology {
            s.check_finite(s.step)?;
            exact_elbo(s, self.m, self.design, &self.hyper, ideology)?.total()
        } else {
            let draws = Draws::sample(&mut self.rng, self.cfg.mc_samples, s);
            let (terms, grads) = reparam_gradients(s, self.m, self.design, batch, &self.hyper, &draws);
            apply_gradients(s, &grads, self.cfg.learning_rate);
            terms.total()
        };
        s.check_finite(s.step)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { term: "elbo".into(), step: s.step });
        }
        self.trace.push(value);
        Ok(value)
    }

    /// One pass over a fresh permutation of the documents. `on_batch` runs
    /// after every step.
    pub fn run_epoch(&mut self, on_batch: &mut dyn FnMut(&Fitter) -> Result<()>) -> Result<()> {
        let mut order: Vec<usize> = (0..self.m.num_docs()).collect();
        order.shuffle(&mut self.rng);
        let size = self.cfg.batch_size.min(order.len());
        for chunk in order.chunks(size) {
            self.step(chunk.to_vec())?;
            on_batch(self)?;
        }
        self.epochs_done += 1;
        Ok(())
    }

    /// Runs the remaining epochs of the configuration.
    pub fn run(&mut self, on_batch: &mut dyn FnMut(&Fitter) -> Result<()>) -> Result<()> {
        while self.epochs_done < self.cfg.epochs {
            self.run_epoch(on_batch)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: VariationalState,
    pub trace: Vec<f64>,
    pub hpf_trace: Vec<f64>,
}

/// Warm start, initialization and all epochs in one call.
pub fn fit(
    m: &DocTermMatrix,
    design: &DesignMatrix,
    anchors: &[f64],
    hyper: &Hyperparams,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let hpf = fit_hpf(m, cfg.num_topics, hyper, cfg.hpf_iters, cfg.seed)?;
    let state = init_state(&hpf, anchors, design, hyper, cfg)?;
    let mut fitter = Fitter::new(m, design, *hyper, cfg.clone(), state)?;
    fitter.run(&mut |_| Ok(()))?;
    Ok(FitResult {
        state: fitter.state,
        trace: fitter.trace,
        hpf_trace: hpf.trace,
    })
}
