//! Sampled objective for a mini-batch, its reparameterization gradients
//! with respect to the polarity values and positions, and the Adam step.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::elbo::{doc_topic_terms, hierarchy_terms, poisson_global_terms, ElboTerms};
use super::updates::{design_quadratic_forms, log_sum_exp, predicted_positions, Batch, TermMoments};
use crate::corpus::{DesignMatrix, DocTermMatrix};
use crate::math::{log_gamma, sigmoid, LN_2PI};
use crate::model::Hyperparams;
use crate::state::{AdamMoments, VariationalState, MAX_VAR_LOGIT, MIN_VAR_LOGIT};

/// Standard normal draws shared by every evaluation of one step.
#[derive(Debug, Clone)]
pub struct Draws {
    pub polarity: Vec<Vec<f64>>,
    pub ideal: Vec<Vec<f64>>,
}

impl Draws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize, s: &VariationalState) -> Self {
        let mut polarity = Vec::with_capacity(n);
        let mut ideal = Vec::with_capacity(n);
        for _ in 0..n {
            polarity.push((0..s.polarity.len()).map(|_| rng.sample(StandardNormal)).collect());
            ideal.push((0..s.ideal.len()).map(|_| rng.sample(StandardNormal)).collect());
        }
        Self { polarity, ideal }
    }

    pub fn len(&self) -> usize {
        self.polarity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polarity.is_empty()
    }
}

/// Gradients with respect to means and variance logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub polarity_loc: Vec<f64>,
    pub polarity_var: Vec<f64>,
    pub ideal_loc: Vec<f64>,
    pub ideal_var: Vec<f64>,
}

/// Sampled objective on `batch` with the given draws.
pub fn mc_elbo(
    s: &VariationalState,
    m: &DocTermMatrix,
    design: &DesignMatrix,
    batch: &Batch,
    hyper: &Hyperparams,
    draws: &Draws,
) -> ElboTerms {
    objective(s, m, design, batch, hyper, draws, false).0
}

/// Sampled objective and its reparameterization gradients.
pub fn reparam_gradients(
    s: &VariationalState,
    m: &DocTermMatrix,
    design: &DesignMatrix,
    batch: &Batch,
    hyper: &Hyperparams,
    draws: &Draws,
) -> (ElboTerms, Gradients) {
    let (terms, g) = objective(s, m, design, batch, hyper, draws, true);
    (terms, g.expect("gradients requested"))
}

struct DocPart {
    value: f64,
    polarity: Vec<(usize, f64)>,
    ideal: Vec<f64>,
}

fn objective(
    s: &VariationalState,
    m: &DocTermMatrix,
    design: &DesignMatrix,
    batch: &Batch,
    hyper: &Hyperparams,
    draws: &Draws,
    want_grad: bool,
) -> (ElboTerms, Option<Gradients>) {
    let (k_n, v_n, kp) = (s.dims.topics, s.dims.terms, s.dims.position_topics);
    let n_pol = s.polarity.len();
    let n_ideal = s.ideal.len();
    let tm = TermMoments::new(s);
    let pol_sd: Vec<f64> = (0..n_pol).map(|i| s.polarity.var(i).sqrt()).collect();
    let ideal_sd: Vec<f64> = (0..n_ideal).map(|i| s.ideal.var(i).sqrt()).collect();
    let quad = design_quadratic_forms(s, design);
    let pred = predicted_positions(s, design);
    let log_theta: Vec<Vec<f64>> = batch
        .docs
        .iter()
        .map(|&d| (0..k_n).map(|k| s.doc_topic.mean(d * k_n + k).ln()).collect())
        .collect();
    let log_beta: Vec<f64> = tm.mean.iter().map(|b| b.ln()).collect();
    let mut theta_sums = vec![0.0; batch.authors.len() * k_n];
    for (i, &d) in batch.docs.iter().enumerate() {
        for k in 0..k_n {
            theta_sums[batch.slot[i] * k_n + k] += s.doc_topic.mean(d * k_n + k);
        }
    }

    let n_draws = draws.len() as f64;
    let mut recon = 0.0;
    let mut sampled_prior = 0.0;
    let mut g_pol_loc = vec![0.0; n_pol];
    let mut g_pol_var = vec![0.0; n_pol];
    let mut g_ideal_loc = vec![0.0; n_ideal];
    let mut g_ideal_var = vec![0.0; n_ideal];

    for (zp, zi) in draws.polarity.iter().zip(&draws.ideal) {
        let eta: Vec<f64> = (0..n_pol).map(|i| s.polarity.loc[i] + pol_sd[i] * zp[i]).collect();
        let pos: Vec<f64> = (0..n_ideal).map(|i| s.ideal.loc[i] + ideal_sd[i] * zi[i]).collect();
        let mut g_eta = vec![0.0; n_pol];
        let mut g_pos = vec![0.0; n_ideal];

        // Observed counts: y * log sum_k E theta E beta exp(eta x).
        let parts: Vec<DocPart> = batch
            .docs
            .par_iter()
            .enumerate()
            .map(|(i, &d)| {
                let a = m.author(d);
                let mut logits = vec![0.0; k_n];
                let mut part = DocPart {
                    value: 0.0,
                    polarity: Vec::new(),
                    ideal: vec![0.0; kp],
                };
                for (v, y) in m.row(d) {
                    for k in 0..k_n {
                        let x = pos[a * kp + s.pos_col(k)];
                        logits[k] = log_theta[i][k] + log_beta[k * v_n + v] + eta[k * v_n + v] * x;
                    }
                    let y = y as f64;
                    let lse = log_sum_exp(&logits);
                    part.value += y * lse - log_gamma(y + 1.0);
                    if want_grad {
                        for k in 0..k_n {
                            let w = y * (logits[k] - lse).exp();
                            let j = s.pos_col(k);
                            part.polarity.push((k * v_n + v, w * pos[a * kp + j]));
                            part.ideal[j] += w * eta[k * v_n + v];
                        }
                    }
                }
                part
            })
            .collect();
        let mut positive = 0.0;
        for (i, part) in parts.iter().enumerate() {
            positive += part.value;
            if want_grad {
                for &(kv, g) in &part.polarity {
                    g_eta[kv] += batch.scale * g;
                }
                let a = batch.authors[batch.slot[i]];
                for j in 0..kp {
                    g_pos[a * kp + j] += batch.scale * part.ideal[j];
                }
            }
        }

        // Expected total rate: sum_k Theta_ak sum_v E beta_kv exp(eta x).
        let topic_parts: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..k_n)
            .into_par_iter()
            .map(|k| {
                let j = s.pos_col(k);
                let mut value = 0.0;
                let mut ge = if want_grad { vec![0.0; v_n] } else { Vec::new() };
                let mut gp = vec![0.0; batch.authors.len()];
                for (slot, &a) in batch.authors.iter().enumerate() {
                    let t = theta_sums[slot * k_n + k];
                    let x = pos[a * kp + j];
                    let mut acc = 0.0;
                    let mut acc_eta = 0.0;
                    for v in 0..v_n {
                        let kv = k * v_n + v;
                        let r = tm.mean[kv] * (eta[kv] * x).exp();
                        acc += r;
                        if want_grad {
                            ge[v] += t * r * x;
                            acc_eta += r * eta[kv];
                        }
                    }
                    value += t * acc;
                    gp[slot] = t * acc_eta;
                }
                (value, ge, gp)
            })
            .collect();
        let mut negative = 0.0;
        for (k, (value, ge, gp)) in topic_parts.iter().enumerate() {
            negative += value;
            if want_grad {
                for v in 0..v_n {
                    g_eta[k * v_n + v] -= batch.scale * ge[v];
                }
                let j = s.pos_col(k);
                for (slot, &a) in batch.authors.iter().enumerate() {
                    g_pos[a * kp + j] -= batch.scale * gp[slot];
                }
            }
        }
        recon += batch.scale * (positive - negative);

        // Sampled priors of the polarity values and positions.
        for k in 0..k_n {
            let (er, elr) = (s.polarity_prec.mean(k), s.polarity_prec.mean_log(k));
            for v in 0..v_n {
                let kv = k * v_n + v;
                sampled_prior += 0.5 * elr - 0.5 * LN_2PI - 0.5 * er * eta[kv] * eta[kv];
                g_eta[kv] -= er * eta[kv];
            }
        }
        for a in 0..s.dims.authors {
            let (ei, eli) = (s.ideal_prec.mean(a), s.ideal_prec.mean_log(a));
            for j in 0..kp {
                let i = a * kp + j;
                let diff = pos[i] - pred[i];
                sampled_prior += 0.5 * eli - 0.5 * LN_2PI - 0.5 * ei * (diff * diff + quad[a]);
                g_pos[i] -= ei * diff;
            }
        }

        if want_grad {
            for i in 0..n_pol {
                g_pol_loc[i] += g_eta[i] / n_draws;
                let sig = sigmoid(s.polarity.var_logit[i]);
                g_pol_var[i] += g_eta[i] * zp[i] * 0.5 * pol_sd[i] * (1.0 - sig) / n_draws;
            }
            for i in 0..n_ideal {
                g_ideal_loc[i] += g_pos[i] / n_draws;
                let sig = sigmoid(s.ideal.var_logit[i]);
                g_ideal_var[i] += g_pos[i] * zi[i] * 0.5 * ideal_sd[i] * (1.0 - sig) / n_draws;
            }
        }
    }

    let (p_doc, e_doc) = doc_topic_terms(s, m, &batch.docs, hyper);
    let (p_glob, e_glob) = poisson_global_terms(s, hyper);
    let (p_hier, e_hier) = hierarchy_terms(s, hyper);
    let terms = ElboTerms {
        reconstruction: recon / n_draws,
        log_prior: sampled_prior / n_draws + batch.scale * p_doc + p_glob + p_hier,
        entropy: batch.scale * e_doc + e_glob + e_hier + s.polarity.entropy() + s.ideal.entropy(),
    };
    if !want_grad {
        return (terms, None);
    }
    for (g, &u) in g_pol_var.iter_mut().zip(&s.polarity.var_logit) {
        *g += 0.5 * (1.0 - sigmoid(u));
    }
    for (g, &u) in g_ideal_var.iter_mut().zip(&s.ideal.var_logit) {
        *g += 0.5 * (1.0 - sigmoid(u));
    }
    (
        terms,
        Some(Gradients {
            polarity_loc: g_pol_loc,
            polarity_var: g_pol_var,
            ideal_loc: g_ideal_loc,
            ideal_var: g_ideal_var,
        }),
    )
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam ascent step on `params`; `t` counts steps from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], mom: &mut AdamMoments, lr: f64, t: u64) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        mom.m[i] = ADAM_BETA1 * mom.m[i] + (1.0 - ADAM_BETA1) * g;
        mom.v[i] = ADAM_BETA2 * mom.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = mom.m[i] / c1;
        let vh = mom.v[i] / c2;
        params[i] += lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Adam step on all four vectors; variance logits are clipped so that
/// variances stay strictly inside (0, 1).
pub fn apply_gradients(s: &mut VariationalState, g: &Gradients, lr: f64) {
    let t = s.step.max(1);
    adam_step(&mut s.polarity.loc, &g.polarity_loc, &mut s.adam.polarity_loc, lr, t);
    adam_step(&mut s.polarity.var_logit, &g.polarity_var, &mut s.adam.polarity_var, lr, t);
    adam_step(&mut s.ideal.loc, &g.ideal_loc, &mut s.adam.ideal_loc, lr, t);
    adam_step(&mut s.ideal.var_logit, &g.ideal_var, &mut s.adam.ideal_var, lr, t);
    for u in s.polarity.var_logit.iter_mut().chain(s.ideal.var_logit.iter_mut()) {
        *u = u.clamp(MIN_VAR_LOGIT, MAX_VAR_LOGIT);
    }
    assert!((0..s.polarity.len()).all(|i| s.polarity.var(i) < 1.0));
    assert!((0..s.ideal.len()).all(|i| s.ideal.var(i) < 1.0));
}
