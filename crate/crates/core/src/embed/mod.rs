//! Text embedding providers.
//!
//! Two providers share one interface: a built-in hashed n-gram featurizer and
//! a table of precomputed vectors (for example transformer embeddings computed
//! elsewhere). Sentence vectors come in two flavors: the sentence alone, which
//! lives in the same space as turn vectors, and the sentence marked inside its
//! turn, which is the input of the sentence classifier.

mod featurizer;
mod precomputed;

pub use featurizer::HashedFeaturizer;
pub use precomputed::{load_precomputed, write_binary, write_text, PrecomputedEmbeddings};

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{Corpus, SentenceRef, Turn, TurnRef};
use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

/// Default embedding width, matching common sentence-encoder outputs.
pub const DEFAULT_DIM: usize = 768;

pub type EmbeddingVector<T> = Vec<T>;

#[derive(Clone, Debug)]
pub enum EmbeddingProvider {
    Featurizer(HashedFeaturizer),
    Precomputed(PrecomputedEmbeddings),
}

impl EmbeddingProvider {
    pub fn featurizer(dim: usize, seed: u64) -> Self {
        EmbeddingProvider::Featurizer(HashedFeaturizer::new(dim, seed))
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Featurizer(f) => f.dim(),
            EmbeddingProvider::Precomputed(p) => p.dim(),
        }
    }

    /// Vector of one sentence without context.
    pub fn embed_sentence<T: Scalar>(&self, dialogue_id: &str, turn: &Turn, sentence: usize) -> Result<Vec<T>> {
        let s = sentence_of(dialogue_id, turn, sentence)?;
        match self {
            EmbeddingProvider::Featurizer(f) => Ok(f.sentence(&s.text)),
            EmbeddingProvider::Precomputed(p) => {
                p.lookup(&SentenceRef::new(dialogue_id, turn.index, sentence).to_string())
            }
        }
    }

    /// Vector of a whole turn. The featurizer mean-pools its sentence vectors.
    pub fn embed_turn<T: Scalar>(&self, dialogue_id: &str, turn: &Turn) -> Result<Vec<T>> {
        match self {
            EmbeddingProvider::Featurizer(f) => {
                let mut acc = vec![T::zero(); f.dim()];
                for s in &turn.sentences {
                    let v: Vec<T> = f.sentence(&s.text);
                    acc.iter_mut().zip(&v).for_each(|(a, &x)| *a += x);
                }
                let n = T::of_usize(turn.sentences.len().max(1));
                acc.iter_mut().for_each(|a| *a /= n);
                Ok(acc)
            }
            EmbeddingProvider::Precomputed(p) => p.lookup(&TurnRef::new(dialogue_id, turn.index).to_string()),
        }
    }

    /// Vector of a target sentence marked within its turn.
    pub fn embed_sentence_in_context<T: Scalar>(
        &self,
        dialogue_id: &str,
        turn: &Turn,
        sentence: usize,
    ) -> Result<Vec<T>> {
        let s = sentence_of(dialogue_id, turn, sentence)?;
        match self {
            EmbeddingProvider::Featurizer(f) => Ok(f.in_context(&s.text, &turn.text())),
            EmbeddingProvider::Precomputed(p) => {
                p.lookup(&SentenceRef::new(dialogue_id, turn.index, sentence).to_string())
            }
        }
    }
}

/// In-context vectors of every professional sentence, in corpus order.
#[derive(Clone, Debug)]
pub struct SentenceTable<T> {
    refs: Vec<SentenceRef>,
    index: HashMap<SentenceRef, usize>,
    vectors: Matrix<T>,
}

impl<T: Scalar> SentenceTable<T> {
    pub fn build(corpus: &Corpus, provider: &EmbeddingProvider) -> Result<Self> {
        let items: Vec<(SentenceRef, &Turn)> = corpus.professional_sentences().map(|(r, t, _)| (r, t)).collect();
        let rows = items
            .par_iter()
            .map(|(r, t)| provider.embed_sentence_in_context::<T>(&r.dialogue_id, t, r.sentence_index))
            .collect::<Result<Vec<_>>>()?;
        let dim = provider.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            data.extend(row);
        }
        let refs: Vec<SentenceRef> = items.into_iter().map(|(r, _)| r).collect();
        let vectors = Matrix::from_vec(refs.len(), dim, data)?;
        let index = refs.iter().cloned().enumerate().map(|(i, r)| (r, i)).collect();
        Ok(Self { refs, index, vectors })
    }

    pub fn refs(&self) -> &[SentenceRef] {
        &self.refs
    }

    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn position(&self, r: &SentenceRef) -> Option<usize> {
        self.index.get(r).copied()
    }

    pub fn vector(&self, r: &SentenceRef) -> Option<&[T]> {
        self.position(r).map(|i| self.vectors.row(i))
    }
}

fn sentence_of<'a>(dialogue_id: &str, turn: &'a Turn, sentence: usize) -> Result<&'a crate::corpus::Sentence> {
    turn.sentences
        .get(sentence)
        .ok_or_else(|| Error::invariant(SentenceRef::new(dialogue_id, turn.index, sentence), "sentence not in turn"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SpeakerRole;

    fn turn(texts: &[&str]) -> Turn {
        Turn::new(0, SpeakerRole::Professional, texts.iter().map(|s| s.to_string()))
    }

    #[test]
    fn single_sentence_turn_equals_sentence_vector() {
        let p = EmbeddingProvider::featurizer(64, 3);
        let t = turn(&["How long have you had the cough?"]);
        let tv: Vec<f64> = p.embed_turn("d", &t).unwrap();
        let sv: Vec<f64> = p.embed_sentence("d", &t, 0).unwrap();
        assert_eq!(tv, sv);
    }

    #[test]
    fn turn_vector_is_exact_mean_of_sentences() {
        let p = EmbeddingProvider::featurizer(96, 3);
        let t = turn(&["Hello there.", "Take ibuprofen twice a day.", "Any questions?"]);
        let tv: Vec<f32> = p.embed_turn("d", &t).unwrap();
        let mut acc = vec![0f32; 96];
        for i in 0..3 {
            let v: Vec<f32> = p.embed_sentence("d", &t, i).unwrap();
            acc.iter_mut().zip(&v).for_each(|(a, &x)| *a += x);
        }
        acc.iter_mut().for_each(|a| *a /= 3.0);
        assert_eq!(tv, acc);
    }

    #[test]
    fn identical_targets_in_same_turn_match() {
        let p = EmbeddingProvider::featurizer(128, 5);
        let t = turn(&["Okay.", "Take it with meals.", "Okay."]);
        let a: Vec<f64> = p.embed_sentence_in_context("d", &t, 0).unwrap();
        let b: Vec<f64> = p.embed_sentence_in_context("d", &t, 2).unwrap();
        let c: Vec<f64> = p.embed_sentence_in_context("d", &t, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_sentence_context_is_well_defined() {
        let p = EmbeddingProvider::featurizer(32, 5);
        let t = turn(&["Rest."]);
        let v: Vec<f64> = p.embed_sentence_in_context("d", &t, 0).unwrap();
        assert!(v.iter().all(|x| x.is_finite()) && v.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn out_of_range_sentence_is_an_error() {
        let p = EmbeddingProvider::featurizer(32, 5);
        assert!(p.embed_sentence::<f64>("d", &turn(&["a"]), 3).is_err());
    }
}
