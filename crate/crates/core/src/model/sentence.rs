use super::mlp::{Mlp, OutputKind};
use super::{LabelScores, ModelEmbedding, TrainConfig, TrainReport};
use crate::bootstrap::LabeledSentence;
use crate::corpus::{Corpus, SentenceRef};
use crate::embed::EmbeddingProvider;
use crate::linalg::Matrix;
use crate::{Error, Result, Scalar, SectionLabel};

/// Multiclass sentence classifier trained in refinement round `round`.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceModel<T> {
    pub(crate) net: Mlp<T>,
    pub round: usize,
}

/// Prediction for one sentence together with its model embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePrediction<T> {
    pub label: SectionLabel,
    pub probs: LabelScores<T>,
    pub embedding: Vec<T>,
}

impl<T: Scalar> SentenceModel<T> {
    pub fn new(input: usize, hidden: usize, round: usize, seed: u64) -> Self {
        Self {
            net: Mlp::new(input, hidden, SectionLabel::COUNT, OutputKind::Softmax, seed),
            round,
        }
    }

    pub fn from_net(net: Mlp<T>, round: usize) -> Result<Self> {
        if net.output_kind() != OutputKind::Softmax || net.output_dim() != SectionLabel::COUNT {
            return Err(Error::ModelFormat("sentence model needs five softmax outputs".into()));
        }
        Ok(Self { net, round })
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.hidden_dim()
    }

    /// Trains on sentence vectors `x` with one label per row. `init` warm-starts
    /// from an earlier model instead of a fresh initialization.
    pub fn fit(
        x: &Matrix<T>,
        labels: &[SectionLabel],
        config: &TrainConfig,
        round: usize,
        init: Option<&SentenceModel<T>>,
    ) -> Result<(Self, TrainReport)> {
        if labels.is_empty() {
            return Err(Error::Precondition("no labeled sentences to train on".into()));
        }
        let first = labels[0];
        if labels.iter().all(|&l| l == first) {
            return Err(Error::Precondition(format!("every training sentence is labeled {first}")));
        }
        let mut y = Matrix::zeros(labels.len(), SectionLabel::COUNT);
        for (i, l) in labels.iter().enumerate() {
            y[(i, l.index())] = T::one();
        }
        let mut model = match init {
            Some(m) if m.net.input_dim() == x.cols() && m.net.hidden_dim() == config.hidden => Self {
                net: m.net.clone(),
                round,
            },
            Some(_) => return Err(Error::Precondition("warm-start model has a different shape".into())),
            None => Self::new(x.cols(), config.hidden, round, config.seed),
        };
        let report = model.net.fit(x, &y, config)?;
        Ok((model, report))
    }

    pub fn predict_vector(&self, x: &[T]) -> Result<SentencePrediction<T>> {
        let (p, h) = self.net.forward(x)?;
        let mut out = [T::zero(); SectionLabel::COUNT];
        out.copy_from_slice(&p);
        let probs = LabelScores(out);
        Ok(SentencePrediction {
            label: probs.argmax(),
            probs,
            embedding: h,
        })
    }

    /// Predicts a corpus sentence embedded within its turn.
    pub fn predict_sentence(
        &self,
        corpus: &Corpus,
        provider: &EmbeddingProvider,
        sentence: &SentenceRef,
    ) -> Result<SentencePrediction<T>> {
        let (turn, _) = corpus.resolve(sentence)?;
        let x = provider.embed_sentence_in_context(&sentence.dialogue_id, turn, sentence.sentence_index)?;
        self.predict_vector(&x)
    }

    pub fn model_embedding(
        &self,
        corpus: &Corpus,
        provider: &EmbeddingProvider,
        sentence: &SentenceRef,
    ) -> Result<ModelEmbedding<T>> {
        let p = self.predict_sentence(corpus, provider, sentence)?;
        Ok(ModelEmbedding {
            sentence: sentence.clone(),
            round: self.round,
            vector: p.embedding,
        })
    }
}

/// Trains a round-`round` sentence model on every labeled sentence.
/// `Mixed` sentences must already be filtered out.
pub fn train_sentence_model<T: Scalar>(
    labels: &[LabeledSentence],
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    config: &TrainConfig,
    round: usize,
) -> Result<(SentenceModel<T>, TrainReport)> {
    let mut data = Vec::with_capacity(labels.len() * provider.dim());
    let mut ys = Vec::with_capacity(labels.len());
    for l in labels {
        let y = l
            .label
            .section()
            .ok_or_else(|| Error::Precondition(format!("{} is labeled mixed", l.sentence)))?;
        let (turn, _) = corpus.resolve(&l.sentence)?;
        data.extend(provider.embed_sentence_in_context::<T>(&l.sentence.dialogue_id, turn, l.sentence.sentence_index)?);
        ys.push(y);
    }
    let x = Matrix::from_vec(ys.len(), provider.dim(), data)?;
    SentenceModel::fit(&x, &ys, config, round, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn blobs() -> (Matrix<f64>, Vec<SectionLabel>) {
        let mut rng = seeds::rng(1);
        let mut x = Matrix::zeros(100, 6);
        let mut y = Vec::new();
        for i in 0..100 {
            let l = SectionLabel::from_index(i % 5).unwrap();
            for j in 0..6 {
                x[(i, j)] = rng.random_range(-0.2..0.2);
            }
            x[(i, l.index())] += 1.0;
            y.push(l);
        }
        (x, y)
    }

    #[test]
    fn fits_blobs_and_exposes_hidden_layer() {
        let (x, y) = blobs();
        let cfg = TrainConfig {
            hidden: 12,
            epochs: 40,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (m, _) = SentenceModel::fit(&x, &y, &cfg, 2, None).unwrap();
        assert_eq!(m.round, 2);
        let mut correct = 0;
        for (i, &l) in y.iter().enumerate() {
            let p = m.predict_vector(x.row(i)).unwrap();
            assert_eq!(p.embedding.len(), 12);
            assert!(p.embedding.iter().all(|v| v.abs() <= 1.0));
            correct += usize::from(p.label == l);
        }
        assert!(correct >= 95, "{correct}");
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::<f64>::zeros(3, 4);
        let y = vec![SectionLabel::Other; 3];
        assert!(matches!(
            SentenceModel::fit(&x, &y, &TrainConfig::default(), 1, None),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn warm_start_continues_from_given_parameters() {
        let (x, y) = blobs();
        let cfg = TrainConfig {
            hidden: 8,
            epochs: 1,
            ..TrainConfig::default()
        };
        let (a, _) = SentenceModel::fit(&x, &y, &cfg, 1, None).unwrap();
        let zero = TrainConfig { epochs: 0, ..cfg.clone() };
        let (b, _) = SentenceModel::fit(&x, &y, &zero, 2, Some(&a)).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(b.round, 2);
    }
}
