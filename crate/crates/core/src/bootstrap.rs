//! Sentence pseudo-labels derived from the turn model.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SentenceRef, Turn};
use crate::embed::EmbeddingProvider;
use crate::model::{LabelScores, TurnModel};
use crate::{ClusterVerdict, Error, Result, Scalar, SectionLabel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapThresholds {
    /// Turn labels and final sentence candidates must exceed this.
    pub alpha1: f64,
    /// Turn labels above this are candidates for the fallback argmax.
    pub alpha2: f64,
    /// Sentence probability at or above this claims the sentence outright.
    pub alpha3: f64,
}

impl Default for BootstrapThresholds {
    fn default() -> Self {
        Self {
            alpha1: 0.5,
            alpha2: 0.1,
            alpha3: 0.9,
        }
    }
}

impl BootstrapThresholds {
    pub fn validate(&self) -> Result<()> {
        for a in [self.alpha1, self.alpha2, self.alpha3] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!("threshold {a} outside (0, 1)")));
            }
        }
        if !(self.alpha2 <= self.alpha1 && self.alpha1 <= self.alpha3) {
            tracing::warn!(?self, "thresholds are not ordered alpha2 <= alpha1 <= alpha3");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Bootstrap,
    Propagated,
    Human,
}

/// Label of one professional sentence at a given round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence: SentenceRef,
    pub label: ClusterVerdict,
    pub round: usize,
    pub provenance: Provenance,
    #[serde(default)]
    pub source_cluster: Option<usize>,
}

/// Labels the sentences of one turn from turn-level and per-sentence
/// probabilities.
pub fn assign_sentence_labels<T: Scalar>(
    turn_probs: &LabelScores<T>,
    sentence_probs: &[LabelScores<T>],
    thresholds: &BootstrapThresholds,
) -> Vec<SectionLabel> {
    let a1 = T::of(thresholds.alpha1);
    let a2 = T::of(thresholds.alpha2);
    let a3 = T::of(thresholds.alpha3);
    let summary_turn = turn_probs[SectionLabel::Summarization] > a1;
    let filter: Vec<SectionLabel> = turn_probs.iter().filter(|&(_, p)| p > a2).map(|(l, _)| l).collect();
    sentence_probs
        .iter()
        .map(|p| {
            if summary_turn {
                return SectionLabel::Summarization;
            }
            for l in [SectionLabel::HistoryTaking, SectionLabel::Education, SectionLabel::CarePlan] {
                if p[l] >= a3 {
                    return l;
                }
            }
            let mut best: Option<SectionLabel> = None;
            for &l in &filter {
                if best.is_none_or(|b| p[l] > p[b]) {
                    best = Some(l);
                }
            }
            match best {
                Some(l) if p[l] > a1 => l,
                _ => SectionLabel::Other,
            }
        })
        .collect()
}

/// Round-0 labels for the sentences of one professional turn. Patient turns
/// yield nothing.
pub fn bootstrap_sentence_labels<T: Scalar>(
    model: &TurnModel<T>,
    dialogue_id: &str,
    turn: &Turn,
    provider: &EmbeddingProvider,
    thresholds: &BootstrapThresholds,
) -> Result<Vec<LabeledSentence>> {
    if !turn.is_professional() {
        return Ok(Vec::new());
    }
    let turn_probs = model.predict_turn(provider, dialogue_id, turn)?;
    let sentence_probs = (0..turn.sentences.len())
        .map(|s| model.predict_vector(&provider.embed_sentence::<T>(dialogue_id, turn, s)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(assign_sentence_labels(&turn_probs, &sentence_probs, thresholds)
        .into_iter()
        .enumerate()
        .map(|(s, label)| LabeledSentence {
            sentence: SentenceRef::new(dialogue_id, turn.index, s),
            label: label.into(),
            round: 0,
            provenance: Provenance::Bootstrap,
            source_cluster: None,
        })
        .collect())
}

/// Bootstraps every professional sentence of the corpus, in corpus order.
pub fn bootstrap_corpus<T: Scalar>(
    model: &TurnModel<T>,
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    thresholds: &BootstrapThresholds,
) -> Result<Vec<LabeledSentence>> {
    thresholds.validate()?;
    let turns: Vec<_> = corpus.professional_turns().collect();
    let per_turn = turns
        .par_iter()
        .map(|(r, t)| bootstrap_sentence_labels(model, &r.dialogue_id, t, provider, thresholds))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_turn.into_iter().flatten().collect())
}

pub fn write_labels<W: Write>(labels: &[LabeledSentence], mut w: W) -> Result<()> {
    for l in labels {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "labels.jsonl".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SectionLabel::*;

    fn scores(h: f64, s: f64, e: f64, c: f64, o: f64) -> LabelScores<f64> {
        LabelScores([h, s, e, c, o])
    }

    #[test]
    fn summary_turn_claims_every_sentence() {
        let t = scores(0.1, 0.6, 0.1, 0.1, 0.1);
        let s = vec![scores(0.99, 0.0, 0.0, 0.0, 0.0), scores(0.0, 0.0, 0.0, 0.0, 0.99)];
        assert_eq!(assign_sentence_labels(&t, &s, &Default::default()), vec![Summarization, Summarization]);
    }

    #[test]
    fn history_branch_and_fallback_argmax() {
        let t = scores(0.4, 0.05, 0.2, 0.05, 0.05);
        let s = vec![scores(0.95, 0.0, 0.0, 0.0, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &Default::default()), vec![HistoryTaking]);

        let t = scores(0.05, 0.05, 0.3, 0.15, 0.05);
        let s = vec![scores(0.2, 0.0, 0.55, 0.6, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &Default::default()), vec![CarePlan]);

        let s = vec![scores(0.2, 0.0, 0.45, 0.3, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &Default::default()), vec![Other]);
    }

    #[test]
    fn empty_filter_gives_other() {
        let t = scores(0.05, 0.05, 0.05, 0.05, 0.05);
        let s = vec![scores(0.8, 0.0, 0.0, 0.0, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &Default::default()), vec![Other]);
    }

    #[test]
    fn boundaries_follow_strictness() {
        let th = BootstrapThresholds::default();
        // Exactly alpha3 claims; exactly alpha1 on the turn does not.
        let t = scores(0.5, 0.5, 0.05, 0.05, 0.05);
        let s = vec![scores(0.9, 0.0, 0.0, 0.0, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &th), vec![HistoryTaking]);
        // Fallback candidate at exactly alpha1 is rejected.
        let s = vec![scores(0.5, 0.0, 0.0, 0.0, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &th), vec![Other]);
    }

    #[test]
    fn branch_precedence_is_fixed() {
        let t = scores(0.05, 0.05, 0.05, 0.05, 0.05);
        let s = vec![scores(0.0, 0.0, 0.95, 0.99, 0.0), scores(0.9, 0.0, 0.99, 0.99, 0.0)];
        assert_eq!(assign_sentence_labels(&t, &s, &Default::default()), vec![Education, HistoryTaking]);
    }

    #[test]
    fn labels_round_trip() {
        let l = vec![LabeledSentence {
            sentence: SentenceRef::new("a", 1, 2),
            label: ClusterVerdict::Mixed,
            round: 3,
            provenance: Provenance::Propagated,
            source_cluster: Some(7),
        }];
        let mut buf = Vec::new();
        write_labels(&l, &mut buf).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), l);
    }
}
