//! Dialogue data model, ingestion, sentence segmentation and synthetic corpora.

mod io;
mod segment;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use crate::SectionLabel;
pub use io::{ingest_corpus, parse_corpus, read_ground_truth, write_corpus, write_ground_truth, GoldRecord};
pub use segment::{segment_sentences, ABBREVIATIONS};
pub use synth::{generate_synthetic_corpus, Range, SectionDistribution, SharedPool, SynthConfig, TemplatePools};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerRole {
    Patient,
    Professional,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: SpeakerRole,
    pub sentences: Vec<Sentence>,
}

impl Turn {
    /// Builds a turn from already segmented sentence texts.
    pub fn new(index: usize, speaker: SpeakerRole, sentences: impl IntoIterator<Item = String>) -> Self {
        let sentences = sentences
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence { index, text })
            .collect();
        Self {
            index,
            speaker,
            sentences,
        }
    }

    /// Sentence texts joined by single spaces.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&s.text);
        }
        out
    }

    pub fn is_professional(&self) -> bool {
        self.speaker == SpeakerRole::Professional
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Address of one sentence in a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub sentence_index: usize,
}

impl SentenceRef {
    pub fn new(dialogue_id: impl Into<String>, turn_index: usize, sentence_index: usize) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turn_index,
            sentence_index,
        }
    }

    pub fn turn(&self) -> TurnRef {
        TurnRef::new(self.dialogue_id.clone(), self.turn_index)
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.dialogue_id, self.turn_index, self.sentence_index)
    }
}

/// Address of one turn in a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TurnRef {
    pub dialogue_id: String,
    pub turn_index: usize,
}

impl TurnRef {
    pub fn new(dialogue_id: impl Into<String>, turn_index: usize) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turn_index,
        }
    }
}

impl fmt::Display for TurnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dialogue_id, self.turn_index)
    }
}

/// Immutable, validated collection of dialogues.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    dialogues: Vec<Dialogue>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Validates all invariants and indexes the dialogues.
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(dialogues.len());
        for (i, d) in dialogues.iter().enumerate() {
            validate_dialogue(d)?;
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(Error::DuplicateDialogue(d.id.clone()));
            }
        }
        Ok(Self { dialogues, by_id })
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.by_id.get(id).map(|&i| &self.dialogues[i])
    }

    pub fn turn(&self, r: &TurnRef) -> Option<&Turn> {
        self.dialogue(&r.dialogue_id)?.turns.get(r.turn_index)
    }

    pub fn sentence(&self, r: &SentenceRef) -> Option<&Sentence> {
        self.dialogue(&r.dialogue_id)?
            .turns
            .get(r.turn_index)?
            .sentences
            .get(r.sentence_index)
    }

    /// Resolves a sentence reference or fails with an invariant error naming it.
    pub fn resolve(&self, r: &SentenceRef) -> Result<(&Turn, &Sentence)> {
        let turn = self
            .dialogue(&r.dialogue_id)
            .and_then(|d| d.turns.get(r.turn_index))
            .ok_or_else(|| Error::invariant(r, "reference does not resolve in corpus"))?;
        let sentence = turn
            .sentences
            .get(r.sentence_index)
            .ok_or_else(|| Error::invariant(r, "reference does not resolve in corpus"))?;
        Ok((turn, sentence))
    }

    /// All professional turns in corpus order.
    pub fn professional_turns(&self) -> impl Iterator<Item = (TurnRef, &Turn)> + '_ {
        self.dialogues.iter().flat_map(|d| {
            d.turns
                .iter()
                .filter(|t| t.is_professional())
                .map(move |t| (TurnRef::new(d.id.clone(), t.index), t))
        })
    }

    /// All professional sentences in corpus order.
    pub fn professional_sentences(&self) -> impl Iterator<Item = (SentenceRef, &Turn, &Sentence)> + '_ {
        self.dialogues.iter().flat_map(|d| {
            d.turns.iter().filter(|t| t.is_professional()).flat_map(move |t| {
                t.sentences
                    .iter()
                    .map(move |s| (SentenceRef::new(d.id.clone(), t.index, s.index), t, s))
            })
        })
    }

    pub fn professional_sentence_count(&self) -> usize {
        self.professional_turns().map(|(_, t)| t.sentences.len()).sum()
    }
}

fn validate_dialogue(d: &Dialogue) -> Result<()> {
    if d.id.is_empty() {
        return Err(Error::invariant("<dialogue>", "empty dialogue id"));
    }
    for (ti, t) in d.turns.iter().enumerate() {
        let tref = TurnRef::new(d.id.clone(), ti);
        if t.index != ti {
            return Err(Error::invariant(&tref, format!("turn index {} is not contiguous", t.index)));
        }
        if t.sentences.is_empty() {
            return Err(Error::invariant(&tref, "turn has no sentences"));
        }
        for (si, s) in t.sentences.iter().enumerate() {
            let sref = SentenceRef::new(d.id.clone(), ti, si);
            if s.index != si {
                return Err(Error::invariant(&sref, format!("sentence index {} is not contiguous", s.index)));
            }
            if s.text.is_empty() {
                return Err(Error::invariant(&sref, "empty sentence"));
            }
            if s.text.trim() != s.text {
                return Err(Error::invariant(&sref, "sentence has leading or trailing whitespace"));
            }
        }
    }
    Ok(())
}

/// Gold section labels for (a subset of) professional sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    labels: BTreeMap<SentenceRef, SectionLabel>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, r: SentenceRef, label: SectionLabel) -> Option<SectionLabel> {
        self.labels.insert(r, label)
    }

    pub fn get(&self, r: &SentenceRef) -> Option<SectionLabel> {
        self.labels.get(r).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SentenceRef, SectionLabel)> + '_ {
        self.labels.iter().map(|(r, &l)| (r, l))
    }

    /// Every covered sentence must resolve to a professional sentence.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for r in self.labels.keys() {
            let (turn, _) = corpus.resolve(r)?;
            if !turn.is_professional() {
                return Err(Error::invariant(r, "gold label on a patient sentence"));
            }
        }
        Ok(())
    }

    /// Gold multilabel set of a turn: the union of its sentences' labels.
    pub fn turn_labels(&self, corpus: &Corpus, r: &TurnRef) -> std::collections::BTreeSet<SectionLabel> {
        let Some(turn) = corpus.turn(r) else {
            return Default::default();
        };
        turn.sentences
            .iter()
            .filter_map(|s| self.get(&SentenceRef::new(r.dialogue_id.clone(), r.turn_index, s.index)))
            .collect()
    }

    /// Dominant gold label of a turn: the most frequent sentence label, ties
    /// broken by the fixed label order. `None` when no sentence is covered.
    pub fn turn_majority(&self, corpus: &Corpus, r: &TurnRef) -> Option<SectionLabel> {
        let turn = corpus.turn(r)?;
        let mut counts = [0usize; SectionLabel::COUNT];
        for s in &turn.sentences {
            if let Some(l) = self.get(&SentenceRef::new(r.dialogue_id.clone(), r.turn_index, s.index)) {
                counts[l.index()] += 1;
            }
        }
        let best = *counts.iter().max()?;
        if best == 0 {
            return None;
        }
        SectionLabel::ALL.into_iter().find(|l| counts[l.index()] == best)
    }

    /// Empirical label distribution, in fixed label order.
    pub fn distribution(&self) -> [f64; SectionLabel::COUNT] {
        let mut counts = [0usize; SectionLabel::COUNT];
        for &l in self.labels.values() {
            counts[l.index()] += 1;
        }
        let n = self.labels.len().max(1) as f64;
        counts.map(|c| c as f64 / n)
    }
}

impl FromIterator<(SentenceRef, SectionLabel)> for GroundTruth {
    fn from_iter<I: IntoIterator<Item = (SentenceRef, SectionLabel)>>(iter: I) -> Self {
        Self {
            labels: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue(id: &str) -> Dialogue {
        Dialogue {
            id: id.into(),
            turns: vec![
                Turn::new(0, SpeakerRole::Patient, ["I have a cough.".to_string()]),
                Turn::new(
                    1,
                    SpeakerRole::Professional,
                    ["Hello.".to_string(), "How long have you had it?".to_string()],
                ),
            ],
        }
    }

    #[test]
    fn professional_sentences_skip_patients() {
        let c = Corpus::new(vec![dialogue("a")]).unwrap();
        let refs: Vec<String> = c.professional_sentences().map(|(r, _, _)| r.to_string()).collect();
        assert_eq!(refs, ["a/1/0", "a/1/1"]);
        assert_eq!(c.professional_sentence_count(), 2);
    }

    #[test]
    fn rejects_untrimmed_sentence() {
        let mut d = dialogue("a");
        d.turns[1].sentences[0].text = " Hello.".into();
        let err = Corpus::new(vec![d]).unwrap_err();
        assert!(err.to_string().contains("a/1/0"), "{err}");
    }

    #[test]
    fn rejects_non_contiguous_turns() {
        let mut d = dialogue("a");
        d.turns[1].index = 5;
        assert!(Corpus::new(vec![d]).is_err());
    }

    #[test]
    fn turn_majority_breaks_ties_by_label_order() {
        let c = Corpus::new(vec![dialogue("a")]).unwrap();
        let mut g = GroundTruth::new();
        g.insert(SentenceRef::new("a", 1, 0), SectionLabel::Other);
        g.insert(SentenceRef::new("a", 1, 1), SectionLabel::HistoryTaking);
        let t = TurnRef::new("a", 1);
        assert_eq!(g.turn_majority(&c, &t), Some(SectionLabel::HistoryTaking));
        assert_eq!(g.turn_labels(&c, &t).len(), 2);
    }
}
