//! Small synthetic problems shared by unit tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::hpf::fit_hpf;
use crate::inference::init_state;
use crate::model::{FitConfig, Hyperparams};
use crate::state::VariationalState;
use crate::synth::{generate, GroundTruth, Overrides};

/// Intercept plus a 0/1 column alternating over authors.
pub fn two_column_design(num_authors: usize) -> DesignMatrix {
    let mut x = DMatrix::from_element(num_authors, 2, 1.0);
    for a in 0..num_authors {
        x[(a, 1)] = (a % 2) as f64;
    }
    DesignMatrix {
        x,
        column_names: vec!["(Intercept)".into(), "group[b]".into()],
        term_groups: vec![crate::corpus::TermGroup {
            name: "group".into(),
            kind: crate::corpus::TermKind::Main,
            columns: vec![1],
        }],
        factors: Vec::new(),
        interaction_main: None,
    }
}

/// Synthetic corpus without empty documents.
pub fn corpus(d: usize, v: usize, k: usize, a: usize, seed: u64) -> (DocTermMatrix, DesignMatrix, GroundTruth) {
    let design = two_column_design(a);
    for s in seed.. {
        let (m, truth) = generate(&Hyperparams::simulation(), d, v, k, a, &design, s, &Overrides::default()).unwrap();
        if m.validate().is_ok() {
            return (m, design, truth);
        }
    }
    unreachable!()
}

/// A state with random polarity values and positions around a short warm
/// start.
pub fn random_state(m: &DocTermMatrix, design: &DesignMatrix, cfg: &FitConfig, seed: u64) -> VariationalState {
    let hyper = Hyperparams::default();
    let hpf = fit_hpf(m, cfg.num_topics, &hyper, 5, seed).unwrap();
    let anchors = vec![0.0; m.num_authors()];
    let mut s = init_state(&hpf, &anchors, design, &hyper, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for x in s.polarity.loc.iter_mut().chain(s.ideal.loc.iter_mut()) {
        *x = rng.random_range(-1.0..1.0);
    }
    for u in s.polarity.var_logit.iter_mut().chain(s.ideal.var_logit.iter_mut()) {
        *u = rng.random_range(-3.0..0.0);
    }
    for x in s.coef_loc.iter_mut() {
        *x = rng.random_range(-0.5..0.5);
    }
    s
}
