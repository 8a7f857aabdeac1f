//! Weak turn-level supervision: substring rules, annotated turn clusters and
//! individually annotated turns, merged into one multilabel dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::annotate::{per_turn_task, AnnotationTask, Annotator, TaskKind, TaskStatus};
use crate::cluster::{reduce, select_k_elbow, ClusterConfig};
use crate::corpus::{Corpus, SentenceRef, Turn, TurnRef};
use crate::embed::EmbeddingProvider;
use crate::linalg::Matrix;
use crate::{seeds, ClusterVerdict, Error, Result, Scalar, SectionLabel};

pub const DEFAULT_SUMMARY_PATTERNS: [&str; 2] = ["summar", "sum up"];

/// Case-insensitive substring rule over the whole turn text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstringRule {
    pub patterns: Vec<String>,
}

impl Default for SubstringRule {
    fn default() -> Self {
        Self {
            patterns: DEFAULT_SUMMARY_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SubstringRule {
    pub fn matches_text(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.patterns.iter().any(|p| lower.contains(&p.to_lowercase()))
    }

    pub fn matches(&self, turn: &Turn) -> bool {
        self.matches_text(&turn.text())
    }
}

/// The default summarization rule.
pub fn summarization_rule(turn: &Turn) -> bool {
    SubstringRule::default().matches(turn)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Rule,
    ClusterAnnotation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabelSet {
    pub turn: TurnRef,
    pub labels: BTreeSet<SectionLabel>,
    pub sources: BTreeSet<LabelSource>,
}

/// At most one label set per turn, in turn order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabelDataset {
    entries: Vec<TurnLabelSet>,
}

impl TurnLabelDataset {
    pub fn iter(&self) -> impl Iterator<Item = &TurnLabelSet> + '_ {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, turn: &TurnRef) -> Option<&TurnLabelSet> {
        self.entries
            .binary_search_by(|e| e.turn.cmp(turn))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Number of turns carrying each label.
    pub fn label_counts(&self) -> [usize; SectionLabel::COUNT] {
        let mut c = [0; SectionLabel::COUNT];
        for e in &self.entries {
            for l in &e.labels {
                c[l.index()] += 1;
            }
        }
        c
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TurnLabelSet = serde_json::from_str(&line).map_err(|err| Error::Parse {
                path: "turn_labels.jsonl".into(),
                line: i + 1,
                message: err.to_string(),
            })?;
            if e.labels.is_empty() {
                return Err(Error::Parse {
                    path: "turn_labels.jsonl".into(),
                    line: i + 1,
                    message: "empty label set".into(),
                });
            }
            map.insert(e.turn.clone(), e);
        }
        Ok(Self {
            entries: map.into_values().collect(),
        })
    }
}

/// Merges annotated turn groups and rule hits. Labels of a turn reached by
/// several sources are unioned.
pub fn assemble_turn_dataset(
    corpus: &Corpus,
    cluster_verdicts: &[(Vec<TurnRef>, SectionLabel)],
    rule_hits: &[TurnRef],
) -> Result<TurnLabelDataset> {
    let mut map: BTreeMap<TurnRef, TurnLabelSet> = BTreeMap::new();
    let mut add = |turn: &TurnRef, label: SectionLabel, source: LabelSource| -> Result<()> {
        if corpus.turn(turn).is_none() {
            return Err(Error::invariant(turn, "weakly labeled turn not in corpus"));
        }
        let e = map.entry(turn.clone()).or_insert_with(|| TurnLabelSet {
            turn: turn.clone(),
            labels: BTreeSet::new(),
            sources: BTreeSet::new(),
        });
        e.labels.insert(label);
        e.sources.insert(source);
        Ok(())
    };
    for (turns, label) in cluster_verdicts {
        for t in turns {
            add(t, *label, LabelSource::ClusterAnnotation)?;
        }
    }
    for t in rule_hits {
        add(t, SectionLabel::Summarization, LabelSource::Rule)?;
    }
    Ok(TurnLabelDataset {
        entries: map.into_values().collect(),
    })
}

/// A cluster of professional turns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnCluster {
    pub cluster_id: usize,
    pub members: Vec<TurnRef>,
    pub sample: Vec<TurnRef>,
}

impl TurnCluster {
    /// Task showing every sentence of the sampled turns.
    pub fn task(&self, corpus: &Corpus) -> Result<AnnotationTask> {
        let mut sample = Vec::new();
        for r in &self.sample {
            let turn = corpus.turn(r).ok_or_else(|| Error::invariant(r, "turn not in corpus"))?;
            sample.extend((0..turn.sentences.len()).map(|s| SentenceRef::new(r.dialogue_id.clone(), r.turn_index, s)));
        }
        Ok(AnnotationTask {
            task_id: format!("w-c{}", self.cluster_id),
            round: 0,
            kind: TaskKind::TurnCluster,
            cluster_id: Some(self.cluster_id),
            class: None,
            purpose: Some("weak".into()),
            sample,
            member_count: self.members.len(),
            status: TaskStatus::Pending,
            verdict: None,
        })
    }
}

/// Clusters professional turn embeddings with the same reduction and elbow
/// selection used for sentences.
pub fn cluster_turns<T: Scalar>(
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    config: &ClusterConfig,
    seed: u64,
) -> Result<Vec<TurnCluster>> {
    let turns: Vec<(TurnRef, &Turn)> = corpus.professional_turns().collect();
    if turns.is_empty() {
        return Err(Error::Precondition("corpus has no professional turns".into()));
    }
    let rows = turns
        .iter()
        .map(|(r, t)| provider.embed_turn::<T>(&r.dialogue_id, t))
        .collect::<Result<Vec<_>>>()?;
    let x = Matrix::from_rows(&rows)?;
    let (z, _) = reduce(&x, &config.reduction, seeds::derive(seed, "weak-reduce", 0))?;
    let k_max = config.k_max.min(turns.len());
    let k_min = config.k_min.min(k_max);
    let (curve, result) = select_k_elbow(&z, k_min, k_max, &config.kmeans, seeds::derive(seed, "weak-k", 0))?;
    tracing::info!(turns = turns.len(), k = curve.chosen, "clustered turns");
    let mut out = Vec::new();
    for c in 0..result.centroids.rows() {
        let members: Vec<TurnRef> = turns
            .iter()
            .zip(&result.assignments)
            .filter(|(_, &a)| a == c)
            .map(|((r, _), _)| r.clone())
            .collect();
        if members.is_empty() {
            continue;
        }
        let id = out.len();
        let mut rng = seeds::rng(seeds::derive(seed, "weak-sample", id as u64));
        let mut idx = index::sample(&mut rng, members.len(), config.sample_n.min(members.len())).into_vec();
        idx.sort_unstable();
        let sample = idx.into_iter().map(|i| members[i].clone()).collect();
        out.push(TurnCluster {
            cluster_id: id,
            members,
            sample,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeakLabelConfig {
    pub rule: SubstringRule,
    pub cluster: ClusterConfig,
    /// Turns drawn from `Mixed` turn clusters for individual annotation.
    pub per_turn_budget: usize,
}

impl Default for WeakLabelConfig {
    fn default() -> Self {
        Self {
            rule: SubstringRule::default(),
            cluster: ClusterConfig::default(),
            per_turn_budget: 150,
        }
    }
}

/// Everything produced while building the weak turn dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelOutcome {
    pub dataset: TurnLabelDataset,
    pub clusters: Vec<TurnCluster>,
    pub cluster_verdicts: Vec<ClusterVerdict>,
    pub turn_tasks: Vec<AnnotationTask>,
    pub rule_hits: Vec<TurnRef>,
}

/// Clusters turns, asks `annotator` for a verdict per cluster, optionally
/// sends turns from mixed clusters for individual annotation, applies the
/// substring rule and merges all sources.
pub fn weak_label<T: Scalar>(
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    annotator: &dyn Annotator,
    config: &WeakLabelConfig,
    seed: u64,
) -> Result<WeakLabelOutcome> {
    let clusters = cluster_turns::<T>(corpus, provider, &config.cluster, seed)?;
    let mut verdicts = Vec::with_capacity(clusters.len());
    let mut groups = Vec::new();
    let mut mixed_turns = Vec::new();
    for c in &clusters {
        let v = annotator.judge(&c.task(corpus)?)?;
        verdicts.push(v);
        match v.section() {
            Some(l) => groups.push((c.members.clone(), l)),
            None => mixed_turns.extend(c.members.iter().cloned()),
        }
    }
    let mut turn_tasks = Vec::new();
    if config.per_turn_budget > 0 && !mixed_turns.is_empty() {
        let mut rng = seeds::rng(seeds::derive(seed, "weak-per-turn", 0));
        let mut idx = index::sample(&mut rng, mixed_turns.len(), config.per_turn_budget.min(mixed_turns.len())).into_vec();
        idx.sort_unstable();
        let chosen: Vec<TurnRef> = idx.into_iter().map(|i| mixed_turns[i].clone()).collect();
        turn_tasks = per_turn_task(corpus, &chosen, "weak")?;
        for (task, turn) in turn_tasks.iter_mut().zip(&chosen) {
            let v = annotator.judge(task)?;
            task.verdict = Some(v);
            task.status = TaskStatus::Done;
            if let Some(l) = v.section() {
                groups.push((vec![turn.clone()], l));
            }
        }
    }
    let rule_hits: Vec<TurnRef> = corpus
        .professional_turns()
        .filter(|(_, t)| config.rule.matches(t))
        .map(|(r, _)| r)
        .collect();
    let dataset = assemble_turn_dataset(corpus, &groups, &rule_hits)?;
    tracing::info!(
        clusters = clusters.len(),
        mixed = verdicts.iter().filter(|v| v.is_mixed()).count(),
        rule_hits = rule_hits.len(),
        turns = dataset.len(),
        "assembled weak turn labels"
    );
    Ok(WeakLabelOutcome {
        dataset,
        clusters,
        cluster_verdicts: verdicts,
        turn_tasks,
        rule_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, SpeakerRole};
    use proptest::prelude::*;

    fn turn(text: &str) -> Turn {
        Turn::new(0, SpeakerRole::Professional, [text.to_string()])
    }

    #[test]
    fn rule_examples() {
        assert!(summarization_rule(&turn("To summarize, you have had fever for 3 days.")));
        assert!(summarization_rule(&turn("Let me sum up what you told me.")));
        assert!(!summarization_rule(&turn("It has been a hot summer.")));
    }

    proptest! {
        #[test]
        fn rule_ignores_case_and_position(pre in "[a-z ]{0,12}", post in "[a-z ]{0,12}", mask in proptest::collection::vec(any::<bool>(), 6)) {
            let word: String = "summar".chars().zip(&mask).map(|(c, &up)| if up { c.to_ascii_uppercase() } else { c }).collect();
            let text = format!("{pre}{word}{post}");
            prop_assert!(SubstringRule::default().matches_text(&text));
        }
    }

    fn corpus() -> Corpus {
        Corpus::new(vec![Dialogue {
            id: "d".into(),
            turns: (0..3)
                .map(|i| Turn::new(i, SpeakerRole::Professional, [format!("Sentence {i}.")]))
                .collect(),
        }])
        .unwrap()
    }

    #[test]
    fn union_semantics() {
        let c = corpus();
        let t0 = TurnRef::new("d", 0);
        let t1 = TurnRef::new("d", 1);
        let ds = assemble_turn_dataset(
            &c,
            &[(vec![t0.clone()], SectionLabel::HistoryTaking), (vec![t0.clone()], SectionLabel::Education)],
            &[t0.clone(), t1.clone()],
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        let e = ds.get(&t0).unwrap();
        assert_eq!(
            e.labels,
            BTreeSet::from([SectionLabel::HistoryTaking, SectionLabel::Summarization, SectionLabel::Education])
        );
        assert_eq!(ds.get(&t1).unwrap().labels, BTreeSet::from([SectionLabel::Summarization]));
        assert!(ds.get(&TurnRef::new("d", 2)).is_none());
    }

    #[test]
    fn unknown_turn_rejected() {
        let c = corpus();
        assert!(assemble_turn_dataset(&c, &[], &[TurnRef::new("x", 0)]).is_err());
    }

    #[test]
    fn dataset_round_trips() {
        let c = corpus();
        let ds = assemble_turn_dataset(&c, &[(vec![TurnRef::new("d", 2)], SectionLabel::CarePlan)], &[]).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(TurnLabelDataset::read_jsonl(buf.as_slice()).unwrap(), ds);
    }
}
