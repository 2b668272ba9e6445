//! Stochastic variational inference: closed-form coordinate proposals for
//! the conjugate blocks, blended with a decaying step size, and Adam steps
//! on the polarity values and positions.

mod elbo;
mod fit;
mod stochastic;
mod updates;

pub use elbo::{elbo_with_allocation, exact_elbo, ElboTerms};
pub use fit::{fit, init_state, FitResult, Fitter};
pub use stochastic::{
    adam_step, apply_gradients, mc_elbo, reparam_gradients, Draws, Gradients, ADAM_BETA1, ADAM_BETA2,
    ADAM_EPS,
};
pub use updates::{
    allocation_probs, apply_local_theta, author_topic_sums, blend_coefficients, log_sum_exp,
    update_author_rates, update_coef_centers, update_coef_prec, update_coef_prec_rate,
    update_coefficients, update_globals, update_ideal_prec, update_local_theta,
    update_polarity_prec, update_polarity_prec_rate, update_term_rates, update_topic_terms,
    Allocation, Batch, CoefProposal, Ideology, TermMoments,
};

#[cfg(test)]
mod tests;
