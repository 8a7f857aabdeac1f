//! Trainable classifier heads over frozen text embeddings.
//!
//! Both heads share one architecture: a `tanh` hidden layer of width `H`
//! followed by one output per section. The turn head uses independent sigmoid
//! outputs (multilabel); the sentence head uses a softmax. The hidden
//! activation is the model embedding that the refinement loop clusters, so it
//! changes every time the head is retrained on new labels.

mod artifact;
mod mlp;
mod sentence;
mod turn;

use std::ops::Index;

use serde::{Deserialize, Serialize};

pub use artifact::{load_model, read_model, save_model, write_model, ModelArtifact, ModelKind};
pub use mlp::{Mlp, OutputKind, TrainReport};
pub use sentence::{train_sentence_model, SentenceModel, SentencePrediction};
pub use turn::{train_turn_model, TurnModel};

use crate::corpus::SentenceRef;
use crate::{Error, Result, Scalar, SectionLabel};

/// Optimization settings shared by both heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Base Adam step size. Full-encoder fine-tuning used 2e-5; training only
    /// the head over frozen embeddings uses a 100x larger rate.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Warmup lasts `total_steps / warmup_divisor` steps.
    pub warmup_divisor: usize,
    pub hidden: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 12,
            epochs: 20,
            warmup_divisor: 5,
            hidden: 256,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.hidden == 0 || self.warmup_divisor == 0 {
            return Err(Error::Config(format!("training settings must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        total_steps / self.warmup_divisor
    }

    /// Step size for the 1-based update `step`: linear warmup, then constant.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = self.warmup_steps(total_steps);
        if warmup == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (step as f64 / warmup as f64).min(1.0)
        }
    }
}

/// One score per section, in fixed label order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores<T>(pub [T; SectionLabel::COUNT]);

impl<T: Scalar> LabelScores<T> {
    /// Highest-scoring label; ties go to the label that comes first.
    pub fn argmax(&self) -> SectionLabel {
        let mut best = SectionLabel::HistoryTaking;
        for l in SectionLabel::ALL {
            if self.0[l.index()] > self.0[best.index()] {
                best = l;
            }
        }
        best
    }

    pub fn iter(&self) -> impl Iterator<Item = (SectionLabel, T)> + '_ {
        SectionLabel::ALL.into_iter().map(|l| (l, self.0[l.index()]))
    }
}

impl<T> Index<SectionLabel> for LabelScores<T> {
    type Output = T;

    fn index(&self, l: SectionLabel) -> &T {
        &self.0[l.index()]
    }
}

/// Hidden-layer activation of a sentence under the round-`round` model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEmbedding<T> {
    pub sentence: SentenceRef,
    pub round: usize,
    pub vector: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_a_fifth_of_total() {
        let c = TrainConfig::default();
        assert_eq!(c.warmup_steps(100), 20);
        assert!((c.learning_rate_at(1, 100) - 2e-3 / 20.0).abs() < 1e-18);
        assert!((c.learning_rate_at(10, 100) - 1e-3).abs() < 1e-18);
        assert_eq!(c.learning_rate_at(20, 100), 2e-3);
        assert_eq!(c.learning_rate_at(99, 100), 2e-3);
        assert_eq!(c.learning_rate_at(1, 4), 2e-3);
    }

    #[test]
    fn argmax_ties_follow_label_order() {
        let s = LabelScores([0.2f64; 5]);
        assert_eq!(s.argmax(), SectionLabel::HistoryTaking);
        let s = LabelScores([0.1, 0.3, 0.3, 0.2, 0.1]);
        assert_eq!(s.argmax(), SectionLabel::Summarization);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
