use super::*;
use crate::hpf::fit_hpf;
use crate::model::{FitConfig, Hyperparams};
use crate::testutil::{corpus, random_state};

#[test]
fn smoke_fit_runs() {
    let (m, design, _) = corpus(40, 30, 2, 4, 1);
    let cfg = FitConfig {
        num_topics: 2,
        epochs: 3,
        batch_size: 10,
        hpf_iters: 20,
        ..FitConfig::default()
    };
    let out = fit(&m, &design, &vec![0.0; 4], &Hyperparams::default(), &cfg).unwrap();
    assert_eq!(out.trace.len(), 12);
    assert!(out.trace.iter().all(|v| v.is_finite()));
    let h = fit_hpf(&m, 2, &Hyperparams::default(), 30, 0).unwrap();
    for w in h.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{w:?}");
    }
    let _ = random_state(&m, &design, &cfg, 3);
}

fn fd_errors(s: &crate::state::VariationalState, m: &crate::corpus::DocTermMatrix, design: &crate::corpus::DesignMatrix, batch: &Batch, draws: &Draws) -> (f64, f64) {
    let hyper = Hyperparams::default();
    let (_, g) = reparam_gradients(s, m, design, batch, &hyper, draws);
    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let f = |st: &crate::state::VariationalState| mc_elbo(st, m, design, batch, &hyper, draws).total();
    let blocks: [(&[f64], usize); 4] = [
        (&g.polarity_loc, 0),
        (&g.polarity_var, 1),
        (&g.ideal_loc, 2),
        (&g.ideal_var, 3),
    ];
    for (grad, which) in blocks {
        for i in 0..grad.len() {
            let mut plus = s.clone();
            let mut minus = s.clone();
            let (p, q) = match which {
                0 => (&mut plus.polarity.loc[i], &mut minus.polarity.loc[i]),
                1 => (&mut plus.polarity.var_logit[i], &mut minus.polarity.var_logit[i]),
                2 => (&mut plus.ideal.loc[i], &mut minus.ideal.loc[i]),
                _ => (&mut plus.ideal.var_logit[i], &mut minus.ideal.var_logit[i]),
            };
            *p += h;
            *q -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let err = (fd - grad[i]).abs();
            worst_abs = worst_abs.max(err);
            worst_rel = worst_rel.max(err / fd.abs().max(grad[i].abs()).max(1e-300));
        }
    }
    (worst_rel, worst_abs)
}

#[test]
fn gradients_match_central_differences() {
    use rand::SeedableRng;
    let (m, design, _) = corpus(10, 12, 2, 4, 11);
    for (mode, seed) in [(crate::model::PositionMode::TopicSpecific, 0), (crate::model::PositionMode::FixedAcrossTopics, 1)] {
        let cfg = FitConfig {
            num_topics: 2,
            positions: mode,
            ..FitConfig::default()
        };
        let s = random_state(&m, &design, &cfg, seed);
        let batch = Batch::new(&m, vec![0, 3, 4, 7]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let draws = Draws::sample(&mut rng, 2, &s);
        let (rel, _) = fd_errors(&s, &m, &design, &batch, &draws);
        assert!(rel < 1e-4, "relative error {rel}");
    }
}

fn blank_state(d: usize, v: usize, k: usize, a: usize, l: usize) -> crate::state::VariationalState {
    use crate::corpus::DesignMatrix;
    use crate::hpf::HpfFit;
    use crate::state::GammaBlock;
    let hpf = HpfFit {
        doc_topic: GammaBlock::filled(d * k, 1.0, 1.0),
        author_rate: GammaBlock::filled(a, 1.0, 1.0),
        topic_term: GammaBlock::filled(k * v, 1.0, 1.0),
        term_rate: GammaBlock::filled(v, 1.0, 1.0),
        trace: Vec::new(),
    };
    let mut design = DesignMatrix::intercept_only(a);
    if l > 1 {
        design.x = nalgebra::DMatrix::from_fn(a, l, |r, c| if c == 0 { 1.0 } else { ((r + c) % 2) as f64 });
    }
    let cfg = FitConfig {
        num_topics: k,
        ..FitConfig::default()
    };
    init_state(&hpf, &vec![0.0; a], &design, &Hyperparams::default(), &cfg).unwrap()
}

#[test]
fn constant_shapes_match_closed_forms() {
    let h = Hyperparams::default();
    let s = blank_state(1, 5031, 1, 1, 1);
    assert_eq!(update_polarity_prec(&s, &h).shape[0], 0.3 + 5031.0 / 2.0);
    assert!((update_polarity_prec(&s, &h).shape[0] - 2515.8).abs() < 1e-9);
    assert_eq!(update_polarity_prec_rate(&s, &h).shape[0], 0.3 + 0.3);

    let s = blank_state(1, 3, 25, 1, 1);
    assert!((update_term_rates(&s, &h).shape[0] - 7.8).abs() < 1e-12);
    assert!((update_ideal_prec(&s, &crate::corpus::DesignMatrix::intercept_only(1), &h).shape[0] - 12.8).abs() < 1e-12);
    assert_eq!(update_coef_prec(&s, &h).shape[0], 0.3 + 25.0 / 2.0);
    assert_eq!(update_coef_prec_rate(&s, &h).shape[0], 0.6);

    let mut s = blank_state(1, 3, 1, 1, 1);
    s.coef_prec = crate::state::GammaBlock::filled(1, 2.0, 2.0);
    assert_eq!(update_coef_centers(&s).var[0], 0.5);
    assert_eq!(crate::math::step_size(1, 0.0, 0.51).unwrap(), 1.0);
}

#[test]
fn precision_rates_collapse() {
    let h = Hyperparams::default();
    let mut s = blank_state(1, 7, 2, 1, 1);
    s.polarity.loc.iter_mut().for_each(|x| *x = 0.0);
    let v0 = s.polarity.var(0);
    let p = update_polarity_prec(&s, &h);
    assert!((p.rate[0] - (s.polarity_prec_rate.mean(0) + 7.0 * v0 / 2.0)).abs() < 1e-12);

    // Coefficients equal to their centers with negligible variances.
    s.coef_loc.iter_mut().for_each(|x| *x = 0.3);
    s.coef_center.loc[0] = 0.3;
    s.coef_center.var[0] = 1e-300;
    s.coef_chol[0] = 1e-160;
    let p = update_coef_prec(&s, &h);
    assert!((p.rate[0] - s.coef_prec_rate.mean(0)).abs() < 1e-12);
    let p = update_coef_prec_rate(&s, &h);
    assert!((p.rate[0] - (5.0 + s.coef_prec.mean(0))).abs() < 1e-12);
}

#[test]
fn intercept_only_regression_is_ridge() {
    let a_n = 4;
    let mut s = blank_state(a_n, 3, 2, a_n, 1);
    s.coef_prec = crate::state::GammaBlock::filled(1, 3.0, 3.0);
    s.ideal_prec = crate::state::GammaBlock::filled(a_n, 2.0, 2.0);
    s.coef_center.loc[0] = 0.0;
    for (i, x) in s.ideal.loc.iter_mut().enumerate() {
        *x = i as f64 * 0.25 - 0.6;
    }
    let design = crate::corpus::DesignMatrix::intercept_only(a_n);
    let p = update_coefficients(&s, &design).unwrap();
    for k in 0..2 {
        let sum: f64 = (0..a_n).map(|a| s.ideal.loc[a * 2 + k]).sum();
        assert!((p.loc[k] - sum / (1.0 + a_n as f64)).abs() < 1e-12);
    }
    assert!((p.covariance[(0, 0)] - 1.0 / (1.0 + a_n as f64)).abs() < 1e-12);

    // Vanishing position precisions leave the prior center.
    s.ideal_prec = crate::state::GammaBlock::filled(a_n, 1e-3, 1e9);
    s.coef_center.loc[0] = 0.7;
    let p = update_coefficients(&s, &design).unwrap();
    assert!((p.loc[0] - 0.7).abs() < 1e-9);
}

#[test]
fn two_column_regression_matches_elimination() {
    let mut s = blank_state(3, 4, 1, 3, 2);
    let design = crate::corpus::DesignMatrix {
        x: nalgebra::DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
        ..crate::corpus::DesignMatrix::intercept_only(3)
    };
    s.coef_prec = crate::state::GammaBlock { shape: vec![2.0, 3.0], rate: vec![4.0, 2.0] };
    s.ideal_prec = crate::state::GammaBlock { shape: vec![1.0, 2.0, 3.0], rate: vec![1.0, 1.0, 2.0] };
    s.coef_center.loc = vec![0.2, -0.1];
    s.ideal.loc = vec![-0.5, 0.4, 1.1];
    let p = update_coefficients(&s, &design).unwrap();

    let w = [1.0, 2.0, 1.5];
    let om = [0.5, 1.5];
    let xs = [[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
    let mut a = [[om[0], 0.0], [0.0, om[1]]];
    let mut b = [om[0] * 0.2, om[1] * -0.1];
    for i in 0..3 {
        for r in 0..2 {
            for c in 0..2 {
                a[r][c] += w[i] * xs[i][r] * xs[i][c];
            }
            b[r] += w[i] * s.ideal.loc[i] * xs[i][r];
        }
    }
    // Gaussian elimination on the 2x2 system.
    let f = a[1][0] / a[0][0];
    let a11 = a[1][1] - f * a[0][1];
    let b1 = b[1] - f * b[0];
    let x1 = b1 / a11;
    let x0 = (b[0] - a[0][1] * x1) / a[0][0];
    assert!((p.loc[0] - x0).abs() < 1e-12 && (p.loc[1] - x1).abs() < 1e-12);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    assert!((p.covariance[(0, 0)] - a[1][1] / det).abs() < 1e-12);
    assert!((p.covariance[(0, 1)] + a[0][1] / det).abs() < 1e-12);
}

#[test]
fn residual_precision_hand_evaluation() {
    let h = Hyperparams::default();
    let mut s = blank_state(1, 2, 1, 1, 1);
    let design = crate::corpus::DesignMatrix::intercept_only(1);
    s.ideal.loc[0] = 0.8;
    s.ideal.var_logit[0] = crate::math::logit(0.1);
    s.coef_loc[0] = 0.5;
    s.coef_chol[0] = 0.2;
    let p = update_ideal_prec(&s, &design, &h);
    assert!((p.shape[0] - 0.8).abs() < 1e-12);
    let want = 0.3 + 0.5 * ((0.8f64 - 0.5).powi(2) + 0.1 + 0.04);
    assert!((p.rate[0] - want).abs() < 1e-12);

    // Exact fit with vanishing variances.
    s.ideal.loc[0] = 0.5;
    s.ideal.var_logit[0] = -30.0;
    s.coef_chol[0] = 1e-12;
    let p = update_ideal_prec(&s, &design, &h);
    assert!((p.rate[0] - 0.3).abs() < 1e-12);
}

#[test]
fn topic_term_proposal_by_hand() {
    let h = Hyperparams::default();
    // Two documents by one author, three terms; term 2 is never used.
    let m = crate::corpus::DocTermMatrix::from_triplets(2, 3, &[(0, 0, 2), (0, 1, 1), (1, 1, 3)], vec![0, 0]).unwrap();
    let mut s = blank_state(2, 3, 1, 1, 1);
    s.doc_topic.shape = vec![2.0, 3.0];
    s.doc_topic.rate = vec![1.0, 2.0];
    s.term_rate.shape = vec![1.0, 2.0, 3.0];
    s.term_rate.rate = vec![1.0; 3];
    s.polarity.loc = vec![0.2, -0.1, 0.4];
    s.ideal.loc = vec![0.5];
    let batch = Batch::full(&m).unwrap();
    let ideology = Ideology::Active(crate::model::ExpectationMode::Exact);
    let tm = TermMoments::new(&s);
    let alloc = allocation_probs(&s, &m, &batch, ideology, &tm);
    let p = update_topic_terms(&s, &m, &batch, &alloc, ideology, &h);
    assert_eq!(p.shape, vec![0.3 + 2.0, 0.3 + 4.0, 0.3]);
    let theta_sum = 2.0 + 1.5;
    for v in 0..3 {
        let e = crate::math::expected_factor(s.polarity.loc[v], s.polarity.var(v), 0.5, s.ideal.var(0));
        assert!((p.rate[v] - (s.term_rate.mean(v) + theta_sum * e)).abs() < 1e-12);
    }
}

#[test]
fn doc_topic_shape_from_counts() {
    let h = Hyperparams::default();
    let (m, design, _) = corpus(6, 8, 3, 2, 4);
    let cfg = FitConfig { num_topics: 3, ..FitConfig::default() };
    let s = random_state(&m, &design, &cfg, 1);
    let batch = Batch::full(&m).unwrap();
    let ideology = Ideology::Active(crate::model::ExpectationMode::Exact);
    let tm = TermMoments::new(&s);
    let alloc = allocation_probs(&s, &m, &batch, ideology, &tm);
    let sums = author_topic_sums(&s, ideology, &batch.authors, &tm);
    let local = update_local_theta(&s, &m, &batch, &alloc, &sums, &h);
    for d in 0..m.num_docs() {
        let total: f64 = (0..3).map(|k| local.shape[d * 3 + k]).sum();
        assert!((total - (0.9 + m.doc_len(d) as f64)).abs() < 1e-9);
    }
}

#[test]
fn batch_proposals_are_unbiased() {
    let h = Hyperparams::default();
    let (m, design, _) = corpus(4, 9, 2, 2, 21);
    let cfg = FitConfig { num_topics: 2, ..FitConfig::default() };
    let s = random_state(&m, &design, &cfg, 2);
    let ideology = Ideology::Active(crate::model::ExpectationMode::Exact);
    let tm = TermMoments::new(&s);
    let full = Batch::full(&m).unwrap();
    let alloc = allocation_probs(&s, &m, &full, ideology, &tm);
    let want_rates = update_author_rates(&s, &m, &full, &h);
    let want_terms = update_topic_terms(&s, &m, &full, &alloc, ideology, &h);
    let mut rates = crate::state::GammaBlock::filled(want_rates.len(), 0.0, 0.0);
    let mut terms = crate::state::GammaBlock::filled(want_terms.len(), 0.0, 0.0);
    let mut n = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let b = Batch::new(&m, vec![i, j]).unwrap();
            let al = allocation_probs(&s, &m, &b, ideology, &tm);
            let r = update_author_rates(&s, &m, &b, &h);
            let t = update_topic_terms(&s, &m, &b, &al, ideology, &h);
            for x in 0..r.len() {
                rates.shape[x] += r.shape[x];
                rates.rate[x] += r.rate[x];
            }
            for x in 0..t.len() {
                terms.shape[x] += t.shape[x];
                terms.rate[x] += t.rate[x];
            }
            n += 1.0;
        }
    }
    assert_eq!(n, 6.0);
    for (got, want) in [(&rates, &want_rates), (&terms, &want_terms)] {
        for x in 0..want.len() {
            assert!((got.shape[x] / n - want.shape[x]).abs() < 1e-10);
            assert!((got.rate[x] / n - want.rate[x]).abs() < 1e-10);
        }
    }
}

/// Perturbations applied after a block update: rates scaled by 1 +/- 1%,
/// locations shifted by +/- 1%.
fn perturbed(s: &crate::state::VariationalState, block: &str, sign: f64) -> crate::state::VariationalState {
    let mut p = s.clone();
    let f = 1.0 + sign * 0.01;
    let shift = |x: &mut f64| *x += sign * 0.01 * x.abs().max(1.0);
    match block {
        "doc_topic" => p.doc_topic.rate.iter_mut().for_each(|r| *r *= f),
        "author_rate" => p.author_rate.rate.iter_mut().for_each(|r| *r *= f),
        "topic_term" => p.topic_term.rate.iter_mut().for_each(|r| *r *= f),
        "term_rate" => p.term_rate.rate.iter_mut().for_each(|r| *r *= f),
        "polarity_prec" => p.polarity_prec.rate.iter_mut().for_each(|r| *r *= f),
        "polarity_prec_rate" => p.polarity_prec_rate.rate.iter_mut().for_each(|r| *r *= f),
        "coef" => p.coef_loc.iter_mut().for_each(shift),
        "coef_center" => p.coef_center.loc.iter_mut().for_each(shift),
        "ideal_prec" => p.ideal_prec.rate.iter_mut().for_each(|r| *r *= f),
        "coef_prec" => p.coef_prec.rate.iter_mut().for_each(|r| *r *= f),
        "coef_prec_rate" => p.coef_prec_rate.rate.iter_mut().for_each(|r| *r *= f),
        _ => unreachable!(),
    }
    p
}

#[test]
fn each_block_update_is_a_strict_optimum() {
    let h = Hyperparams::default();
    let (m, design, _) = corpus(8, 10, 2, 3, 5);
    let cfg = FitConfig { num_topics: 2, ..FitConfig::default() };
    let mut s = random_state(&m, &design, &cfg, 9);
    let ideology = Ideology::Active(crate::model::ExpectationMode::Exact);
    let batch = Batch::full(&m).unwrap();
    let tm = TermMoments::new(&s);
    let alloc = allocation_probs(&s, &m, &batch, ideology, &tm);
    let obj = |st: &crate::state::VariationalState| elbo_with_allocation(st, &m, &design, &h, ideology, &alloc).unwrap().total();
    let check = |st: &crate::state::VariationalState, block: &str| {
        let base = obj(st);
        for sign in [-1.0, 1.0] {
            let v = obj(&perturbed(st, block, sign));
            assert!(v < base, "{block} {sign}: {v} >= {base}");
        }
    };
    let sums = author_topic_sums(&s, ideology, &batch.authors, &tm);
    let local = update_local_theta(&s, &m, &batch, &alloc, &sums, &h);
    apply_local_theta(&mut s, &batch, &local);
    check(&s, "doc_topic");
    s.author_rate = update_author_rates(&s, &m, &batch, &h);
    check(&s, "author_rate");
    s.topic_term = update_topic_terms(&s, &m, &batch, &alloc, ideology, &h);
    check(&s, "topic_term");
    s.term_rate = update_term_rates(&s, &h);
    check(&s, "term_rate");
    s.polarity_prec = update_polarity_prec(&s, &h);
    check(&s, "polarity_prec");
    s.polarity_prec_rate = update_polarity_prec_rate(&s, &h);
    check(&s, "polarity_prec_rate");
    let p = update_coefficients(&s, &design).unwrap();
    blend_coefficients(&mut s, &p, 1.0).unwrap();
    check(&s, "coef");
    s.coef_center = update_coef_centers(&s);
    check(&s, "coef_center");
    s.ideal_prec = update_ideal_prec(&s, &design, &h);
    check(&s, "ideal_prec");
    s.coef_prec = update_coef_prec(&s, &h);
    check(&s, "coef_prec");
    s.coef_prec_rate = update_coef_prec_rate(&s, &h);
    check(&s, "coef_prec_rate");
}

#[test]
fn profiled_objective_equals_explicit_allocation_at_optimum() {
    let h = Hyperparams::default();
    let (m, design, _) = corpus(8, 10, 2, 3, 5);
    let cfg = FitConfig { num_topics: 2, ..FitConfig::default() };
    let s = random_state(&m, &design, &cfg, 3);
    let ideology = Ideology::Active(crate::model::ExpectationMode::Exact);
    let batch = Batch::full(&m).unwrap();
    let alloc = allocation_probs(&s, &m, &batch, ideology, &TermMoments::new(&s));
    let a = exact_elbo(&s, &m, &design, &h, ideology).unwrap().total();
    let b = elbo_with_allocation(&s, &m, &design, &h, ideology, &alloc).unwrap().total();
    assert!((a - b).abs() < 1e-9 * a.abs());
}

fn frozen_trace(mode: crate::model::ExpectationMode, positions: crate::model::PositionMode) -> Vec<f64> {
    let (m, design, _) = corpus(30, 20, 3, 5, 8);
    let cfg = FitConfig {
        num_topics: 3,
        epochs: 40,
        batch_size: 30,
        freeze_ideology: true,
        expectation: mode,
        positions,
        ..FitConfig::default()
    };
    let s = random_state(&m, &design, &cfg, 4);
    let mut f = Fitter::new(&m, &design, Hyperparams::default(), cfg, s).unwrap();
    f.run(&mut |_| Ok(())).unwrap();
    f.trace
}

#[test]
fn frozen_full_batch_trace_is_monotone() {
    use crate::model::{ExpectationMode, PositionMode};
    for (mode, pos) in [
        (ExpectationMode::Exact, PositionMode::TopicSpecific),
        (ExpectationMode::Geometric, PositionMode::TopicSpecific),
        (ExpectationMode::Exact, PositionMode::FixedAcrossTopics),
    ] {
        let t = frozen_trace(mode, pos);
        assert_eq!(t.len(), 40);
        for w in t.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{mode:?} {pos:?}: {w:?}");
        }
    }
}

#[test]
fn hpf_trace_is_monotone() {
    let (m, _, _) = corpus(50, 40, 3, 5, 2);
    let fit = fit_hpf(&m, 3, &Hyperparams::default(), 100, 0).unwrap();
    for w in fit.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{w:?}");
    }
}

#[test]
fn zero_epochs_returns_initial_state() {
    let (m, design, _) = corpus(12, 10, 2, 3, 1);
    let cfg = FitConfig {
        num_topics: 2,
        epochs: 0,
        hpf_iters: 3,
        ..FitConfig::default()
    };
    let anchors = vec![0.5, -0.5, 0.0];
    let out = fit(&m, &design, &anchors, &Hyperparams::default(), &cfg).unwrap();
    let hpf = fit_hpf(&m, 2, &Hyperparams::default(), 3, cfg.seed).unwrap();
    let init = init_state(&hpf, &anchors, &design, &Hyperparams::default(), &cfg).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.state, init);
}

#[test]
fn variances_stay_below_one() {
    let (m, design, _) = corpus(20, 12, 2, 4, 6);
    let cfg = FitConfig {
        num_topics: 2,
        epochs: 5,
        batch_size: 7,
        learning_rate: 0.5,
        ..FitConfig::default()
    };
    let s = random_state(&m, &design, &cfg, 1);
    let mut f = Fitter::new(&m, &design, Hyperparams::default(), cfg, s).unwrap();
    f.run(&mut |f| {
        assert!((0..f.state.polarity.len()).all(|i| f.state.polarity.var(i) < 1.0));
        assert!((0..f.state.ideal.len()).all(|i| f.state.ideal.var(i) < 1.0));
        Ok(())
    })
    .unwrap();
}

fn run_with_threads(threads: usize) -> (crate::state::VariationalState, Vec<f64>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let (m, design, _) = corpus(40, 25, 3, 4, 3);
        let cfg = FitConfig {
            num_topics: 3,
            epochs: 3,
            batch_size: 9,
            hpf_iters: 10,
            seed: 17,
            ..FitConfig::default()
        };
        let out = fit(&m, &design, &[1.0, -1.0, 0.0, 0.0], &Hyperparams::default(), &cfg).unwrap();
        (out.state, out.trace)
    })
}

#[test]
fn seeded_runs_are_reproducible_across_thread_counts() {
    let a = run_with_threads(1);
    let b = run_with_threads(1);
    assert_eq!(a, b);
    let c = run_with_threads(4);
    assert_eq!(a.1.len(), c.1.len());
    for (x, y) in a.1.iter().zip(&c.1) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }
    for (x, y) in a.0.ideal.loc.iter().zip(&c.0.ideal.loc) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn single_cell_objective_matches_term_by_term_assembly() {
    use crate::math::{gamma_entropy, log_gamma, normal_entropy, poisson_logpmf, LN_2PI};
    let h = Hyperparams::default();
    let m = crate::corpus::DocTermMatrix::from_triplets(1, 1, &[(0, 0, 3)], vec![0]).unwrap();
    let design = crate::corpus::DesignMatrix::intercept_only(1);
    let mut s = blank_state(1, 1, 1, 1, 1);
    s.doc_topic = crate::state::GammaBlock { shape: vec![2.0], rate: vec![1.5] };
    s.topic_term = crate::state::GammaBlock { shape: vec![1.2], rate: vec![0.7] };
    s.polarity.loc = vec![0.4];
    s.ideal.loc = vec![-0.8];
    s.coef_loc = vec![0.1];
    let draws = Draws {
        polarity: vec![vec![0.3]],
        ideal: vec![vec![-1.1]],
    };
    let batch = Batch::full(&m).unwrap();
    let got = mc_elbo(&s, &m, &design, &batch, &h, &draws).total();

    let eta = 0.4 + s.polarity.var(0).sqrt() * 0.3;
    let x = -0.8 + s.ideal.var(0).sqrt() * -1.1;
    let lambda = s.doc_topic.mean(0) * s.topic_term.mean(0) * (eta * x).exp();
    let mut want = poisson_logpmf(3.0, lambda).unwrap();
    let gp = |a: f64, elb: f64, eb: f64, g: &crate::state::GammaBlock| {
        a * elb - log_gamma(a) + (a - 1.0) * g.mean_log(0) - eb * g.mean(0)
    };
    let fixed = |a: f64, b: f64, g: &crate::state::GammaBlock| gp(a, b.ln(), b, g);
    want += gp(0.3, s.author_rate.mean_log(0), s.author_rate.mean(0), &s.doc_topic);
    want += fixed(0.3, h.author_rate_rate(), &s.author_rate);
    want += gp(0.3, s.term_rate.mean_log(0), s.term_rate.mean(0), &s.topic_term);
    want += fixed(0.3, h.term_rate_rate(), &s.term_rate);
    want += 0.5 * s.polarity_prec.mean_log(0) - 0.5 * LN_2PI - 0.5 * s.polarity_prec.mean(0) * eta * eta;
    want += gp(0.3, s.polarity_prec_rate.mean_log(0), s.polarity_prec_rate.mean(0), &s.polarity_prec);
    want += fixed(0.3, h.polarity_prec_rate_rate(), &s.polarity_prec_rate);
    let cv = s.coef_chol[0].powi(2);
    want += 0.5 * s.ideal_prec.mean_log(0) - 0.5 * LN_2PI - 0.5 * s.ideal_prec.mean(0) * ((x - 0.1).powi(2) + cv);
    want += fixed(0.3, 0.3, &s.ideal_prec);
    let (mc, vc) = (s.coef_center.loc[0], s.coef_center.var[0]);
    want += 0.5 * s.coef_prec.mean_log(0) - 0.5 * LN_2PI - 0.5 * s.coef_prec.mean(0) * ((0.1 - mc).powi(2) + cv + vc);
    want += -0.5 * LN_2PI - 0.5 * (mc * mc + vc);
    want += gp(0.3, s.coef_prec_rate.mean_log(0), s.coef_prec_rate.mean(0), &s.coef_prec);
    want += fixed(0.3, h.coef_prec_rate_rate(), &s.coef_prec_rate);
    for g in [&s.doc_topic, &s.author_rate, &s.topic_term, &s.term_rate, &s.polarity_prec, &s.polarity_prec_rate, &s.ideal_prec, &s.coef_prec, &s.coef_prec_rate] {
        want += gamma_entropy(g.shape[0], g.rate[0]);
    }
    want += normal_entropy(s.polarity.var(0)) + normal_entropy(s.ideal.var(0)) + normal_entropy(cv) + normal_entropy(vc);
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn reconstruction_of_an_empty_cell() {
    // One nonzero cell plus a zero cell with unit rate: the zero cell adds -1.
    let h = Hyperparams::default();
    let m = crate::corpus::DocTermMatrix::from_triplets(1, 2, &[(0, 0, 1)], vec![0]).unwrap();
    let design = crate::corpus::DesignMatrix::intercept_only(1);
    let mut s = blank_state(1, 2, 1, 1, 1);
    s.polarity.loc = vec![0.0, 0.0];
    s.ideal.loc = vec![0.0];
    let draws = Draws {
        polarity: vec![vec![0.0, 0.0]],
        ideal: vec![vec![0.0]],
    };
    let batch = Batch::full(&m).unwrap();
    let r = mc_elbo(&s, &m, &design, &batch, &h, &draws).reconstruction;
    // Rates are one everywhere: log Poisson(1 | 1) = -1 and the empty cell -1.
    assert!((r - (-2.0)).abs() < 1e-12, "{r}");
}

#[test]
fn prior_and_entropy_gradients() {
    let h = Hyperparams::default();
    let m = crate::corpus::DocTermMatrix::from_triplets(1, 1, &[(0, 0, 1)], vec![0]).unwrap();
    let design = crate::corpus::DesignMatrix::intercept_only(1);
    let mut s = blank_state(1, 1, 1, 1, 1);
    s.polarity.loc = vec![0.7];
    s.ideal.loc = vec![0.0];
    let draws = Draws {
        polarity: vec![vec![0.0]],
        ideal: vec![vec![0.0]],
    };
    let batch = Batch::full(&m).unwrap();
    let (_, g) = reparam_gradients(&s, &m, &design, &batch, &h, &draws);
    // With the position at zero the likelihood has no slope in eta.
    assert!((g.polarity_loc[0] + s.polarity_prec.mean(0) * 0.7).abs() < 1e-12);
    // With z = 0 only the entropy moves the variance logit.
    let sig = s.polarity.var(0);
    assert!((g.polarity_var[0] - 0.5 * (1.0 - sig)).abs() < 1e-12);
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let mut mom = crate::state::AdamMoments::zeros(3);
    let mut p = vec![0.0; 3];
    adam_step(&mut p, &[2.0, -1e-3, 0.0], &mut mom, 0.01, 1);
    assert!(p[0] > 0.0 && p[0] <= 0.01 && p[0] >= 0.01 * 2.0 / (2.0 + 1e-8));
    assert!(p[1] < 0.0 && -p[1] <= 0.01 && -p[1] >= 0.01 * 1e-3 / (1e-3 + 1e-8));
    assert_eq!(p[2], 0.0);
    let mut mom = crate::state::AdamMoments::zeros(1);
    let mut q = vec![1.5];
    for t in 1..100 {
        adam_step(&mut q, &[0.0], &mut mom, 0.01, t);
    }
    assert_eq!(q[0], 1.5);
}

#[test]
fn blending_endpoints() {
    let mut g = crate::state::GammaBlock::filled(1, 2.0, 1.0);
    g.blend(&crate::state::GammaBlock::filled(1, 4.0, 3.0), 0.5);
    assert_eq!((g.shape[0], g.rate[0]), (3.0, 2.0));
    let mut s = blank_state(2, 2, 1, 2, 1);
    let design = crate::corpus::DesignMatrix::intercept_only(2);
    s.ideal.loc = vec![0.4, -0.2];
    let p = update_coefficients(&s, &design).unwrap();
    blend_coefficients(&mut s, &p, 1.0).unwrap();
    assert!((s.coef_loc[0] - p.loc[0]).abs() < 1e-15);
    assert!((s.coef_covariance()[(0, 0)] - p.covariance[(0, 0)]).abs() < 1e-15);
}
