//! Prior constants and run settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed prior constants.
///
/// Document intensities are `Gamma(doc_topic_shape, r_a)` with author rates
/// `r_a ~ Gamma(author_rate_shape, author_rate_shape / author_rate_mean)`;
/// topic-term intensities follow the same pattern with term rates. Polarity
/// precisions and regression-coefficient precisions use gamma-gamma
/// shrinkage hierarchies whose top-level rate is
/// `shrinkage / 2 * rate_shape / prec_shape`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub doc_topic_shape: f64,
    pub author_rate_shape: f64,
    pub author_rate_mean: f64,
    pub topic_term_shape: f64,
    pub term_rate_shape: f64,
    pub term_rate_mean: f64,
    pub polarity_prec_shape: f64,
    pub polarity_prec_rate_shape: f64,
    pub polarity_shrinkage: f64,
    pub coef_prec_shape: f64,
    pub coef_prec_rate_shape: f64,
    pub coef_shrinkage: f64,
    pub ideal_prec_shape: f64,
    pub ideal_prec_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            doc_topic_shape: 0.3,
            author_rate_shape: 0.3,
            author_rate_mean: 0.3,
            topic_term_shape: 0.3,
            term_rate_shape: 0.3,
            term_rate_mean: 0.3,
            polarity_prec_shape: 0.3,
            polarity_prec_rate_shape: 0.3,
            polarity_shrinkage: 10.0,
            coef_prec_shape: 0.3,
            coef_prec_rate_shape: 0.3,
            coef_shrinkage: 10.0,
            ideal_prec_shape: 0.3,
            ideal_prec_rate: 0.3,
        }
    }
}

impl Hyperparams {
    /// Well-conditioned constants for drawing synthetic corpora: the
    /// fitting defaults have heavy enough tails that ancestral draws
    /// regularly overflow.
    pub fn simulation() -> Self {
        Self {
            doc_topic_shape: 1.0,
            author_rate_shape: 10.0,
            author_rate_mean: 1.0,
            topic_term_shape: 0.3,
            term_rate_shape: 10.0,
            term_rate_mean: 1.0,
            polarity_prec_shape: 5.0,
            polarity_prec_rate_shape: 10.0,
            polarity_shrinkage: 4.0,
            coef_prec_shape: 5.0,
            coef_prec_rate_shape: 10.0,
            coef_shrinkage: 4.0,
            ideal_prec_shape: 5.0,
            ideal_prec_rate: 1.0,
        }
    }

    /// Prior rate of the author rates.
    pub fn author_rate_rate(&self) -> f64 {
        self.author_rate_shape / self.author_rate_mean
    }

    pub fn term_rate_rate(&self) -> f64 {
        self.term_rate_shape / self.term_rate_mean
    }

    /// Rate of the gamma prior on the polarity-precision rates.
    pub fn polarity_prec_rate_rate(&self) -> f64 {
        0.5 * self.polarity_shrinkage * self.polarity_prec_rate_shape / self.polarity_prec_shape
    }

    pub fn coef_prec_rate_rate(&self) -> f64 {
        0.5 * self.coef_shrinkage * self.coef_prec_rate_shape / self.coef_prec_shape
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("doc_topic_shape", self.doc_topic_shape),
            ("author_rate_shape", self.author_rate_shape),
            ("author_rate_mean", self.author_rate_mean),
            ("topic_term_shape", self.topic_term_shape),
            ("term_rate_shape", self.term_rate_shape),
            ("term_rate_mean", self.term_rate_mean),
            ("polarity_prec_shape", self.polarity_prec_shape),
            ("polarity_prec_rate_shape", self.polarity_prec_rate_shape),
            ("polarity_shrinkage", self.polarity_shrinkage),
            ("coef_prec_shape", self.coef_prec_shape),
            ("coef_prec_rate_shape", self.coef_prec_rate_shape),
            ("coef_shrinkage", self.coef_shrinkage),
            ("ideal_prec_shape", self.ideal_prec_shape),
            ("ideal_prec_rate", self.ideal_prec_rate),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// How `E[exp(eta * position)]` enters the coordinate updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMode {
    Exact,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    TopicSpecific,
    FixedAcrossTopics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub num_topics: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    /// Step-size exponent, in (0.5, 1].
    pub step_exponent: f64,
    /// Step-size delay, >= 0.
    pub step_delay: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub expectation: ExpectationMode,
    pub positions: PositionMode,
    /// Full-batch sweeps of the Poisson-factorization warm start.
    pub hpf_iters: usize,
    /// Write a checkpoint every this many batches (0 = never).
    pub checkpoint_every: usize,
    /// Keep polarity values and positions fixed; the trace then records the
    /// closed-form objective instead of the sampled estimate.
    pub freeze_ideology: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            num_topics: 25,
            epochs: 1000,
            batch_size: 512,
            mc_samples: 1,
            step_exponent: 0.51,
            step_delay: 0.0,
            learning_rate: 0.01,
            seed: 0,
            expectation: ExpectationMode::Exact,
            positions: PositionMode::TopicSpecific,
            hpf_iters: 200,
            checkpoint_every: 0,
            freeze_ideology: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_topics == 0 {
            return Err(Error::Config("num_topics must be >= 1".into()));
        }
        if !(self.step_exponent > 0.5 && self.step_exponent <= 1.0) {
            return Err(Error::Config(format!(
                "step_exponent must lie in (0.5, 1], got {}",
                self.step_exponent
            )));
        }
        if !(self.step_delay >= 0.0) {
            return Err(Error::Config(format!("step_delay must be >= 0, got {}", self.step_delay)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of position columns: K, or 1 when positions are shared.
    pub fn position_topics(&self) -> usize {
        match self.positions {
            PositionMode::TopicSpecific => self.num_topics,
            PositionMode::FixedAcrossTopics => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_run_settings() {
        let h = Hyperparams::default();
        assert_eq!(h.doc_topic_shape, 0.3);
        assert_eq!(h.polarity_shrinkage, 10.0);
        assert_eq!(h.coef_shrinkage, 10.0);
        assert_eq!(h.ideal_prec_rate, 0.3);
        h.validate().unwrap();
        let c = FitConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.mc_samples), (1000, 512, 1));
        assert_eq!((c.step_exponent, c.step_delay, c.learning_rate), (0.51, 0.0, 0.01));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_settings() {
        let c = FitConfig {
            step_exponent: 0.5,
            ..FitConfig::default()
        };
        assert!(c.validate().is_err());
        let h = Hyperparams {
            ideal_prec_rate: 0.0,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }
}
