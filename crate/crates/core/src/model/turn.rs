use super::mlp::{Mlp, OutputKind};
use super::{LabelScores, TrainConfig, TrainReport};
use crate::corpus::{Corpus, Turn};
use crate::embed::EmbeddingProvider;
use crate::linalg::Matrix;
use crate::weakrules::TurnLabelDataset;
use crate::{Error, Result, Scalar, SectionLabel};

/// Multilabel turn classifier: one independent probability per section.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnModel<T> {
    pub(crate) net: Mlp<T>,
}

impl<T: Scalar> TurnModel<T> {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        Self {
            net: Mlp::new(input, hidden, SectionLabel::COUNT, OutputKind::Sigmoid, seed),
        }
    }

    pub fn from_net(net: Mlp<T>) -> Result<Self> {
        if net.output_kind() != OutputKind::Sigmoid || net.output_dim() != SectionLabel::COUNT {
            return Err(Error::ModelFormat("turn model needs five sigmoid outputs".into()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    /// Trains a fresh model on turn vectors `x` with multi-hot targets.
    pub fn fit(x: &Matrix<T>, targets: &[Vec<SectionLabel>], config: &TrainConfig) -> Result<(Self, TrainReport)> {
        if targets.iter().any(|t| t.is_empty()) {
            return Err(Error::Precondition("every training turn needs at least one label".into()));
        }
        let mut y = Matrix::zeros(targets.len(), SectionLabel::COUNT);
        for (i, t) in targets.iter().enumerate() {
            for l in t {
                y[(i, l.index())] = T::one();
            }
        }
        let mut model = Self::new(x.cols(), config.hidden, config.seed);
        let report = model.net.fit(x, &y, config)?;
        Ok((model, report))
    }

    /// Section probabilities for an embedding vector (a turn or a lone sentence).
    pub fn predict_vector(&self, x: &[T]) -> Result<LabelScores<T>> {
        let (p, _) = self.net.forward(x)?;
        let mut out = [T::zero(); SectionLabel::COUNT];
        out.copy_from_slice(&p);
        Ok(LabelScores(out))
    }

    pub fn predict_turn(&self, provider: &EmbeddingProvider, dialogue_id: &str, turn: &Turn) -> Result<LabelScores<T>> {
        self.predict_vector(&provider.embed_turn(dialogue_id, turn)?)
    }

    /// Labels whose probability is strictly above `threshold`.
    pub fn labels_above(&self, x: &[T], threshold: T) -> Result<Vec<SectionLabel>> {
        let p = self.predict_vector(x)?;
        Ok(p.iter().filter(|&(_, v)| v > threshold).map(|(l, _)| l).collect())
    }
}

/// Embeds every turn of `dataset` and trains a turn model on its label sets.
pub fn train_turn_model<T: Scalar>(
    dataset: &TurnLabelDataset,
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    config: &TrainConfig,
) -> Result<(TurnModel<T>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Precondition("turn label dataset is empty".into()));
    }
    let mut data = Vec::with_capacity(dataset.len() * provider.dim());
    let mut targets = Vec::with_capacity(dataset.len());
    for entry in dataset.iter() {
        let turn = corpus
            .turn(&entry.turn)
            .ok_or_else(|| Error::invariant(&entry.turn, "labeled turn not in corpus"))?;
        data.extend(provider.embed_turn::<T>(&entry.turn.dialogue_id, turn)?);
        targets.push(entry.labels.iter().copied().collect());
    }
    let x = Matrix::from_vec(targets.len(), provider.dim(), data)?;
    TurnModel::fit(&x, &targets, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    #[test]
    fn learns_separable_multilabel_targets() {
        let mut rng = seeds::rng(3);
        let n = 120;
        let d = 8;
        let mut x = Matrix::<f64>::zeros(n, d);
        let mut targets = Vec::new();
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = rng.random_range(-0.1..0.1);
            }
            let a = i % 3 == 0;
            let b = i % 2 == 0;
            let mut t = Vec::new();
            if a {
                x[(i, 0)] += 1.0;
                t.push(SectionLabel::HistoryTaking);
            }
            if b {
                x[(i, 1)] += 1.0;
                t.push(SectionLabel::CarePlan);
            }
            if t.is_empty() {
                x[(i, 2)] += 1.0;
                t.push(SectionLabel::Other);
            }
            targets.push(t);
        }
        let cfg = TrainConfig {
            hidden: 16,
            epochs: 60,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (m, r) = TurnModel::fit(&x, &targets, &cfg).unwrap();
        assert!(r.epoch_losses.last().unwrap() < &r.epoch_losses[0]);
        for i in 0..n {
            let got = m.labels_above(x.row(i), 0.5).unwrap();
            let mut want = targets[i].clone();
            want.sort();
            assert_eq!(got, want, "row {i}");
        }
    }

    #[test]
    fn empty_label_set_rejected() {
        let x = Matrix::<f64>::zeros(2, 3);
        let targets = vec![vec![SectionLabel::Other], vec![]];
        assert!(TurnModel::fit(&x, &targets, &TrainConfig::default()).is_err());
    }
}
