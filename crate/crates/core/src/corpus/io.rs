use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{segment_sentences, Corpus, Dialogue, GroundTruth, SentenceRef, SpeakerRole, Turn};
use crate::{Error, Result, SectionLabel};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRecord {
    id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    speaker: SpeakerRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<String>>,
}

/// Reads a corpus file: one JSON dialogue record per line. Blank lines are
/// ignored.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_corpus(BufReader::new(file), path)
}

/// Parses corpus records from any reader; `origin` is only used in errors.
pub fn parse_corpus(reader: impl BufRead, origin: &Path) -> Result<Corpus> {
    let mut dialogues = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let rec: DialogueRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateDialogue(rec.id));
        }
        let mut turns = Vec::with_capacity(rec.turns.len());
        for (ti, t) in rec.turns.into_iter().enumerate() {
            let sentences = match (t.text, t.sentences) {
                (Some(text), None) => {
                    if text.trim().is_empty() {
                        return Err(parse_err(format!("turn {ti} has empty text")));
                    }
                    segment_sentences(&text).into_iter().map(|s| s.text).collect()
                }
                (None, Some(s)) => s,
                _ => {
                    return Err(parse_err(format!(
                        "turn {ti} must have exactly one of `text` or `sentences`"
                    )))
                }
            };
            turns.push(Turn::new(ti, t.speaker, sentences));
        }
        dialogues.push(Dialogue { id: rec.id, turns });
    }
    Corpus::new(dialogues)
}

/// Writes the corpus in its pre-segmented form, so that ingestion reproduces
/// it exactly.
pub fn write_corpus(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    for d in corpus.dialogues() {
        let rec = DialogueRecord {
            id: d.id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: None,
                    sentences: Some(t.sentences.iter().map(|s| s.text.clone()).collect()),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One line of a ground-truth file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub sentence_index: usize,
    pub label: SectionLabel,
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut gold = GroundTruth::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GoldRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let r = SentenceRef::new(rec.dialogue_id, rec.turn_index, rec.sentence_index);
        if gold.insert(r.clone(), rec.label).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("duplicate gold label for {r}"),
            });
        }
    }
    Ok(gold)
}

pub fn write_ground_truth(gold: &GroundTruth, mut w: impl Write) -> Result<()> {
    for (r, label) in gold.iter() {
        let rec = GoldRecord {
            dialogue_id: r.dialogue_id.clone(),
            turn_index: r.turn_index,
            sentence_index: r.sentence_index,
            label,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Corpus> {
        parse_corpus(s.as_bytes(), Path::new("mem"))
    }

    #[test]
    fn one_line_two_turns() {
        let c = parse(
            r#"{"id":"d1","turns":[{"speaker":"patient","text":"My feet are purple."},{"speaker":"professional","text":"Hi. How long?"}]}"#,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        let d = &c.dialogues()[0];
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[1].sentences.len(), 2);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let line = r#"{"id":"dup","turns":[{"speaker":"patient","text":"Hi."}]}"#;
        let err = parse(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(&err, Error::DuplicateDialogue(id) if id == "dup"));
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let good = r#"{"id":"a","turns":[{"speaker":"patient","text":"Hi."}]}"#;
        let err = parse(&format!("{good}\n{{not json\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn invariant_violation_names_sentence() {
        let err = parse(r#"{"id":"a","turns":[{"speaker":"patient","sentences":["ok"," bad"]}]}"#).unwrap_err();
        assert!(err.to_string().contains("a/0/1"), "{err}");
    }

    #[test]
    fn turn_needs_exactly_one_form() {
        assert!(parse(r#"{"id":"a","turns":[{"speaker":"patient"}]}"#).is_err());
        assert!(parse(r#"{"id":"a","turns":[{"speaker":"patient","text":"a","sentences":["a"]}]}"#).is_err());
    }
}
