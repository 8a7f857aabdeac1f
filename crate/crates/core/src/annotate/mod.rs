//! Annotation tasks, verdict sources and the verdict event log.

mod log;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use log::{replay, EventLog, VerdictEvent};

use crate::cluster::ClusterRecord;
use crate::corpus::{Corpus, GroundTruth, SentenceRef, SpeakerRole, TurnRef};
use crate::{ClusterVerdict, Error, Result, SectionLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// A cluster of sentences from a refinement round.
    Cluster,
    /// A cluster of whole turns for the weak turn labeler.
    TurnCluster,
    /// A single turn.
    Turn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Done,
}

/// A unit of work for an annotator: a sample of sentences that receives one
/// verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub round: usize,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    /// Predicted class of a sentence cluster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<SectionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    pub sample: Vec<SentenceRef>,
    pub member_count: usize,
    pub status: TaskStatus,
    #[serde(default)]
    pub verdict: Option<ClusterVerdict>,
}

impl AnnotationTask {
    pub fn cluster_task_id(round: usize, cluster_id: usize) -> String {
        format!("r{round}-c{cluster_id}")
    }

    pub fn for_cluster<T>(round: usize, record: &ClusterRecord<T>) -> Self {
        Self {
            task_id: Self::cluster_task_id(round, record.cluster_id),
            round,
            kind: TaskKind::Cluster,
            cluster_id: Some(record.cluster_id),
            class: Some(record.class),
            purpose: None,
            sample: record.sample.clone(),
            member_count: record.members.len(),
            status: if record.verdict.is_some() { TaskStatus::Done } else { TaskStatus::Pending },
            verdict: record.verdict,
        }
    }
}

/// One task per turn, each showing every sentence of its turn.
pub fn per_turn_task(corpus: &Corpus, turns: &[TurnRef], purpose: &str) -> Result<Vec<AnnotationTask>> {
    turns
        .iter()
        .map(|r| {
            let turn = corpus.turn(r).ok_or_else(|| Error::invariant(r, "turn not in corpus"))?;
            Ok(AnnotationTask {
                task_id: format!("t-{purpose}-{}-{}", r.dialogue_id, r.turn_index),
                round: 0,
                kind: TaskKind::Turn,
                cluster_id: None,
                class: None,
                purpose: Some(purpose.to_string()),
                sample: (0..turn.sentences.len())
                    .map(|s| SentenceRef::new(r.dialogue_id.clone(), r.turn_index, s))
                    .collect(),
                member_count: 1,
                status: TaskStatus::Pending,
                verdict: None,
            })
        })
        .collect()
}

/// Task list with verdicts folded in from events.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskBoard {
    tasks: BTreeMap<String, AnnotationTask>,
}

impl TaskBoard {
    pub fn new(tasks: impl IntoIterator<Item = AnnotationTask>) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&AnnotationTask> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> + '_ {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Records a verdict; later calls for the same task win.
    pub fn record(&mut self, task_id: &str, verdict: ClusterVerdict) -> Result<&AnnotationTask> {
        let t = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        t.verdict = Some(verdict);
        t.status = TaskStatus::Done;
        Ok(t)
    }

    /// Applies every event in order. Events for unknown tasks are errors.
    pub fn apply_events(&mut self, events: &[VerdictEvent]) -> Result<()> {
        for e in events {
            self.record(&e.task_id, e.verdict)?;
        }
        Ok(())
    }

    pub fn pending(&self) -> Vec<&AnnotationTask> {
        self.tasks.values().filter(|t| t.status == TaskStatus::Pending).collect()
    }

    /// Cluster ids of the cluster tasks still pending.
    pub fn pending_clusters(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.pending().iter().filter_map(|t| t.cluster_id).collect();
        ids.sort_unstable();
        ids
    }
}

/// A sampled sentence shown inside its turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleContext {
    pub sentence: SentenceRef,
    pub speaker: SpeakerRole,
    pub turn_text: String,
    /// Byte range of the target sentence within `turn_text`.
    pub highlight: (usize, usize),
    pub sentences: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDetail {
    #[serde(flatten)]
    pub task: AnnotationTask,
    pub context: Vec<SampleContext>,
}

pub fn task_detail(task: &AnnotationTask, corpus: &Corpus) -> Result<TaskDetail> {
    let context = task
        .sample
        .iter()
        .map(|r| {
            let (turn, _) = corpus.resolve(r)?;
            let mut start = 0;
            let mut highlight = (0, 0);
            for (i, s) in turn.sentences.iter().enumerate() {
                if i == r.sentence_index {
                    highlight = (start, start + s.text.len());
                }
                start += s.text.len() + 1;
            }
            Ok(SampleContext {
                sentence: r.clone(),
                speaker: turn.speaker,
                turn_text: turn.text(),
                highlight,
                sentences: turn.sentences.iter().map(|s| s.text.clone()).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(TaskDetail {
        task: task.clone(),
        context,
    })
}

/// A source of verdicts.
pub trait Annotator: Send + Sync {
    fn id(&self) -> &str;
    fn judge(&self, task: &AnnotationTask) -> Result<ClusterVerdict>;
}

/// Ground-truth oracle: the majority gold label of the sample when its share
/// reaches `tau`, otherwise `Mixed`. A tie for the majority is `Mixed`.
#[derive(Clone, Debug)]
pub struct SimulatedAnnotator<'a> {
    gold: &'a GroundTruth,
    tau: f64,
    id: String,
}

impl<'a> SimulatedAnnotator<'a> {
    pub fn new(gold: &'a GroundTruth, tau: f64) -> Self {
        Self {
            gold,
            tau,
            id: "simulated".into(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn verdict_for(&self, sample: &[SentenceRef]) -> Result<ClusterVerdict> {
        let mut counts = [0usize; SectionLabel::COUNT];
        for r in sample {
            let l = self
                .gold
                .get(r)
                .ok_or_else(|| Error::Precondition(format!("no gold label for {r}")))?;
            counts[l.index()] += 1;
        }
        if sample.is_empty() {
            return Ok(ClusterVerdict::Mixed);
        }
        let max = *counts.iter().max().expect("five counts");
        if counts.iter().filter(|&&c| c == max).count() > 1 {
            return Ok(ClusterVerdict::Mixed);
        }
        let winner = SectionLabel::ALL[counts.iter().position(|&c| c == max).expect("max present")];
        if max as f64 / sample.len() as f64 >= self.tau {
            Ok(winner.into())
        } else {
            Ok(ClusterVerdict::Mixed)
        }
    }
}

impl Annotator for SimulatedAnnotator<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn judge(&self, task: &AnnotationTask) -> Result<ClusterVerdict> {
        self.verdict_for(&task.sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(labels: &[SectionLabel]) -> (GroundTruth, Vec<SentenceRef>) {
        let refs: Vec<SentenceRef> = (0..labels.len()).map(|i| SentenceRef::new("d", 0, i)).collect();
        (refs.iter().cloned().zip(labels.iter().copied()).collect(), refs)
    }

    #[test]
    fn simulated_verdicts() {
        use SectionLabel::*;
        let mut l = vec![Education; 9];
        l.push(Other);
        let (g, r) = gold(&l);
        assert_eq!(SimulatedAnnotator::new(&g, 0.7).verdict_for(&r).unwrap(), ClusterVerdict::Education);
        assert_eq!(SimulatedAnnotator::new(&g, 1.0).verdict_for(&r).unwrap(), ClusterVerdict::Mixed);

        let mut l = vec![Education; 5];
        l.extend([CarePlan; 5]);
        let (g, r) = gold(&l);
        assert_eq!(SimulatedAnnotator::new(&g, 0.3).verdict_for(&r).unwrap(), ClusterVerdict::Mixed);
    }

    #[test]
    fn missing_gold_is_an_error() {
        let (g, _) = gold(&[SectionLabel::Other]);
        let r = vec![SentenceRef::new("x", 0, 0)];
        assert!(SimulatedAnnotator::new(&g, 0.7).verdict_for(&r).is_err());
    }

    #[test]
    fn board_last_write_wins() {
        let t = AnnotationTask {
            task_id: "r1-c0".into(),
            round: 1,
            kind: TaskKind::Cluster,
            cluster_id: Some(0),
            class: Some(SectionLabel::Other),
            purpose: None,
            sample: vec![],
            member_count: 3,
            status: TaskStatus::Pending,
            verdict: None,
        };
        let mut b = TaskBoard::new([t]);
        assert_eq!(b.pending_clusters(), vec![0]);
        b.record("r1-c0", ClusterVerdict::Other).unwrap();
        b.record("r1-c0", ClusterVerdict::Mixed).unwrap();
        assert_eq!(b.get("r1-c0").unwrap().verdict, Some(ClusterVerdict::Mixed));
        assert!(b.pending_clusters().is_empty());
        assert!(matches!(b.record("nope", ClusterVerdict::Other), Err(Error::UnknownTask(_))));
    }
}
