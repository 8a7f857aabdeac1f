//! Iterative cluster refinement.
//!
//! State `k` holds the labels `L^k` and the model trained on their non-mixed
//! part. State 0 starts from bootstrap labels; every later state comes from
//! clustering the previous model's embeddings per predicted class, taking one
//! verdict per cluster and propagating it to all members.

mod store;

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use store::{write_atomic, RoundStore, RoundSummary};

use crate::annotate::{AnnotationTask, Annotator, EventLog, TaskBoard};
use crate::bootstrap::{bootstrap_corpus, BootstrapThresholds, LabeledSentence, Provenance};
use crate::cluster::{cluster_per_class, ClassSummary, ClusterConfig, ClusterRecord};
use crate::corpus::{Corpus, GroundTruth, SentenceRef};
use crate::embed::{EmbeddingProvider, SentenceTable};
use crate::linalg::Matrix;
use crate::metrics::{
    cosine_similarity_report, eval_pairs, maxpool_labels, turn_model_eval, turn_set_eval, AccuracyScope, EvalReport,
    SimilarityConfig, SimilarityReport, TurnEvalReport,
};
use crate::model::{train_turn_model, LabelScores, SentenceModel, TrainConfig, TurnModel};
use crate::weakrules::{weak_label, WeakLabelConfig, WeakLabelOutcome};
use crate::{seeds, ClusterVerdict, Error, Result, Scalar, SectionLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub train: TrainConfig,
    pub cluster: ClusterConfig,
    pub rounds: usize,
    /// Start each round's model from the previous one instead of afresh.
    pub warm_start: bool,
    pub similarity: SimilarityConfig,
    pub accuracy_scope: AccuracyScope,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            rounds: 3,
            warm_start: false,
            similarity: SimilarityConfig::default(),
            accuracy_scope: AccuracyScope::default(),
            seed: 0,
        }
    }
}

/// One row of the relabel log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelEntry {
    /// Predicted class whose members formed the cluster.
    pub class: SectionLabel,
    pub cluster_id: usize,
    pub members: usize,
    pub verdict: ClusterVerdict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelLog {
    pub round: usize,
    pub entries: Vec<RelabelEntry>,
}

impl RelabelLog {
    pub fn clusters_per_class(&self) -> [usize; SectionLabel::COUNT] {
        let mut c = [0; SectionLabel::COUNT];
        for e in &self.entries {
            c[e.class.index()] += 1;
        }
        c
    }

    /// Number of clusters whose verdict differs from their predicted class.
    pub fn moved(&self) -> usize {
        self.entries.iter().filter(|e| e.verdict != ClusterVerdict::from(e.class)).count()
    }

    /// One line per predicted class listing `cluster (members) -> verdict`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in SectionLabel::ALL {
            let rows: Vec<&RelabelEntry> = self.entries.iter().filter(|e| e.class == l).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = write!(s, "{:<15} {:>2} clusters:", l.title(), rows.len());
            for e in rows {
                let _ = write!(s, " c{} ({}) -> {};", e.cluster_id, e.members, e.verdict);
            }
            s.push('\n');
        }
        s
    }
}

/// Outputs of a sentence model over the sentence table.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions<T> {
    pub labels: Vec<SectionLabel>,
    pub probs: Vec<LabelScores<T>>,
    pub embeddings: Matrix<T>,
}

pub fn predict_all<T: Scalar>(model: &SentenceModel<T>, table: &SentenceTable<T>) -> Result<Predictions<T>> {
    let x = table.vectors();
    let out = (0..x.rows())
        .into_par_iter()
        .map(|i| model.predict_vector(x.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let h = model.embedding_dim();
    let mut data = Vec::with_capacity(out.len() * h);
    let mut labels = Vec::with_capacity(out.len());
    let mut probs = Vec::with_capacity(out.len());
    for p in out {
        labels.push(p.label);
        probs.push(p.probs);
        data.extend(p.embedding);
    }
    Ok(Predictions {
        embeddings: Matrix::from_vec(labels.len(), h, data)?,
        labels,
        probs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Non-mixed labels of this state against gold.
    pub label_eval: EvalReport,
    pub mixed_fraction: f64,
    /// The model trained on this state's labels.
    pub model_eval: EvalReport,
    pub similarity: SimilarityReport,
    pub turn_eval: TurnEvalReport,
}

/// Snapshot after round `round`.
#[derive(Clone, Debug)]
pub struct RoundState<T> {
    pub round: usize,
    pub labels: Vec<LabeledSentence>,
    /// Clusters of the previous model's embeddings, with verdicts. Empty at round 0.
    pub clusters: Vec<ClusterRecord<T>>,
    pub class_summaries: Vec<ClassSummary>,
    pub relabel_log: RelabelLog,
    /// Model trained on [`training_view`] of `labels`.
    pub model: SentenceModel<T>,
    pub train_losses: Vec<f64>,
    pub predictions: Predictions<T>,
    pub metrics: Option<RoundMetrics>,
}

impl<T: Scalar> RoundState<T> {
    pub fn summary(&self, seed: u64) -> RoundSummary {
        RoundSummary {
            round: self.round,
            labels: self.labels.len(),
            mixed: self.labels.iter().filter(|l| l.label.is_mixed()).count(),
            clusters: self.clusters.len(),
            class_summaries: self.class_summaries.clone(),
            train_losses: self.train_losses.clone(),
            seed,
        }
    }
}

/// Non-mixed labels, or the ids of clusters still awaiting a verdict.
pub fn training_view<T>(state: &RoundState<T>) -> Result<Vec<LabeledSentence>> {
    view_of(&state.labels, &state.clusters)
}

fn view_of<T>(labels: &[LabeledSentence], clusters: &[ClusterRecord<T>]) -> Result<Vec<LabeledSentence>> {
    let pending: Vec<usize> = clusters.iter().filter(|c| c.verdict.is_none()).map(|c| c.cluster_id).collect();
    if !pending.is_empty() {
        return Err(Error::PendingVerdicts(pending));
    }
    Ok(labels.iter().filter(|l| !l.label.is_mixed()).cloned().collect())
}

/// Labels every member with its cluster's verdict, in `order`.
pub fn propagate_verdicts<T>(
    order: &[SentenceRef],
    clusters: &[ClusterRecord<T>],
    round: usize,
    provenance: Provenance,
) -> Result<(Vec<LabeledSentence>, RelabelLog)> {
    let pending: Vec<usize> = clusters.iter().filter(|c| c.verdict.is_none()).map(|c| c.cluster_id).collect();
    if !pending.is_empty() {
        return Err(Error::PendingVerdicts(pending));
    }
    let mut by_ref: HashMap<&SentenceRef, (ClusterVerdict, usize)> = HashMap::new();
    for c in clusters {
        let v = c.verdict.expect("checked above");
        for m in &c.members {
            if by_ref.insert(m, (v, c.cluster_id)).is_some() {
                return Err(Error::invariant(m, "sentence belongs to two clusters"));
            }
        }
    }
    if by_ref.len() != order.len() {
        return Err(Error::invariant(
            format!("round {round}"),
            format!("{} clustered sentences for {} labels", by_ref.len(), order.len()),
        ));
    }
    let labels = order
        .iter()
        .map(|r| {
            let &(label, cluster) = by_ref.get(r).ok_or_else(|| Error::invariant(r, "sentence in no cluster"))?;
            Ok(LabeledSentence {
                sentence: r.clone(),
                label,
                round,
                provenance,
                source_cluster: Some(cluster),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log = RelabelLog {
        round,
        entries: clusters
            .iter()
            .map(|c| RelabelEntry {
                class: c.class,
                cluster_id: c.cluster_id,
                members: c.members.len(),
                verdict: c.verdict.expect("checked above"),
            })
            .collect(),
    };
    Ok((labels, log))
}

/// A round whose clusters are formed but not all judged.
#[derive(Clone, Debug)]
pub struct PendingRound<T> {
    pub round: usize,
    pub clusters: Vec<ClusterRecord<T>>,
    pub class_summaries: Vec<ClassSummary>,
    pub board: TaskBoard,
}

impl<T: Scalar> PendingRound<T> {
    /// Copies verdicts from the board onto the cluster records.
    fn sync_verdicts(&mut self) {
        for c in &mut self.clusters {
            c.verdict = self
                .board
                .get(&AnnotationTask::cluster_task_id(self.round, c.cluster_id))
                .and_then(|t| t.verdict);
        }
    }

    pub fn record(&mut self, task_id: &str, verdict: ClusterVerdict) -> Result<()> {
        self.board.record(task_id, verdict)?;
        self.sync_verdicts();
        Ok(())
    }

    pub fn apply_log(&mut self, log: &EventLog) -> Result<()> {
        self.board.apply_events(log.events())?;
        self.sync_verdicts();
        Ok(())
    }
}

/// Shared inputs of every round: corpus, cached sentence vectors, optional
/// ground truth and settings.
pub struct RefineContext<'a, T> {
    pub corpus: &'a Corpus,
    pub table: SentenceTable<T>,
    pub gold: Option<&'a GroundTruth>,
    pub config: RefineConfig,
}

impl<'a, T: Scalar> RefineContext<'a, T> {
    pub fn new(
        corpus: &'a Corpus,
        provider: &EmbeddingProvider,
        gold: Option<&'a GroundTruth>,
        config: RefineConfig,
    ) -> Result<Self> {
        config.train.validate()?;
        config.cluster.reduction.validate()?;
        Ok(Self {
            corpus,
            table: SentenceTable::build(corpus, provider)?,
            gold,
            config,
        })
    }

    fn check_complete(&self, labels: &[LabeledSentence]) -> Result<()> {
        let order: Vec<&SentenceRef> = labels.iter().map(|l| &l.sentence).collect();
        let want: Vec<&SentenceRef> = self.table.refs().iter().collect();
        if order != want {
            return Err(Error::Precondition(format!(
                "labels must cover the {} professional sentences in corpus order, got {}",
                want.len(),
                order.len()
            )));
        }
        Ok(())
    }

    fn train(&self, view: &[LabeledSentence], round: usize, init: Option<&SentenceModel<T>>) -> Result<(SentenceModel<T>, Vec<f64>)> {
        let rows: Vec<usize> = view
            .iter()
            .map(|l| self.table.position(&l.sentence).ok_or_else(|| Error::invariant(&l.sentence, "not a professional sentence")))
            .collect::<Result<_>>()?;
        let ys: Vec<SectionLabel> = view.iter().map(|l| l.label.section().expect("view excludes mixed")).collect();
        let x = self.table.vectors().select_rows(&rows);
        let cfg = self.config.train.with_seed(seeds::derive(self.config.seed, "train", round as u64));
        let init = if self.config.warm_start { init } else { None };
        let (model, report) = SentenceModel::fit(&x, &ys, &cfg, round + 1, init)?;
        Ok((model, report.epoch_losses))
    }

    fn metrics(&self, labels: &[LabeledSentence], predictions: &Predictions<T>, round: usize) -> Result<Option<RoundMetrics>> {
        let Some(gold) = self.gold else {
            return Ok(None);
        };
        let scope = self.config.accuracy_scope;
        let mut label_pairs = Vec::new();
        let mut model_pairs = Vec::new();
        let mut mixed = 0;
        for (i, l) in labels.iter().enumerate() {
            let Some(g) = gold.get(&l.sentence) else {
                continue;
            };
            match l.label.section() {
                Some(s) => label_pairs.push((s, g)),
                None => mixed += 1,
            }
            model_pairs.push((predictions.labels[i], g));
        }
        if model_pairs.len() != gold.len() {
            return Err(Error::Coverage {
                count: gold.len() - model_pairs.len(),
                first: gold
                    .iter()
                    .find(|(r, _)| self.table.position(r).is_none())
                    .map(|(r, _)| r.to_string())
                    .unwrap_or_default(),
            });
        }
        let similarity = cosine_similarity_report(
            &predictions.embeddings,
            &predictions.labels,
            &self.config.similarity,
            seeds::derive(self.config.seed, "similarity", round as u64),
        )?;
        let mut turn_pairs = Vec::new();
        let refs = self.table.refs();
        let mut i = 0;
        while i < refs.len() {
            let turn = refs[i].turn();
            let mut j = i;
            while j < refs.len() && refs[j].turn() == turn {
                j += 1;
            }
            let g = gold.turn_labels(self.corpus, &turn);
            if !g.is_empty() {
                turn_pairs.push((maxpool_labels(&predictions.probs[i..j]), g));
            }
            i = j;
        }
        Ok(Some(RoundMetrics {
            label_eval: eval_pairs(&label_pairs, scope),
            mixed_fraction: if labels.is_empty() { 0.0 } else { mixed as f64 / labels.len() as f64 },
            model_eval: eval_pairs(&model_pairs, scope),
            similarity,
            turn_eval: turn_set_eval(&turn_pairs),
        }))
    }

    fn complete(
        &self,
        round: usize,
        labels: Vec<LabeledSentence>,
        clusters: Vec<ClusterRecord<T>>,
        class_summaries: Vec<ClassSummary>,
        relabel_log: RelabelLog,
        prev_model: Option<&SentenceModel<T>>,
    ) -> Result<RoundState<T>> {
        let view = view_of(&labels, &clusters)?;
        let (model, train_losses) = self.train(&view, round, prev_model)?;
        let predictions = predict_all(&model, &self.table)?;
        let metrics = self.metrics(&labels, &predictions, round)?;
        if let Some(m) = &metrics {
            tracing::info!(
                round,
                label_accuracy = m.label_eval.accuracy,
                model_accuracy = m.model_eval.accuracy,
                mixed = m.mixed_fraction,
                "round complete"
            );
        }
        Ok(RoundState {
            round,
            labels,
            clusters,
            class_summaries,
            relabel_log,
            model,
            train_losses,
            predictions,
            metrics,
        })
    }

    /// State 0 from bootstrap labels.
    pub fn initial_state(&self, bootstrap: Vec<LabeledSentence>) -> Result<RoundState<T>> {
        self.check_complete(&bootstrap)?;
        self.complete(0, bootstrap, Vec::new(), Vec::new(), RelabelLog::default(), None)
    }

    /// Clusters the previous model's embeddings and opens one task per cluster.
    pub fn prepare_round(&self, prev: &RoundState<T>) -> Result<PendingRound<T>> {
        let round = prev.round + 1;
        let clustering = cluster_per_class(
            self.table.refs(),
            &prev.predictions.labels,
            &prev.predictions.embeddings,
            &self.config.cluster,
            seeds::derive(self.config.seed, "cluster", round as u64),
        )?;
        let board = TaskBoard::new(clustering.records.iter().map(|r| AnnotationTask::for_cluster(round, r)));
        Ok(PendingRound {
            round,
            clusters: clustering.records,
            class_summaries: clustering.classes,
            board,
        })
    }

    /// Asks `annotator` about every task not yet judged in `log`, logging
    /// each verdict before recording it.
    pub fn collect_verdicts(&self, pending: &mut PendingRound<T>, annotator: &dyn Annotator, log: &mut EventLog) -> Result<()> {
        pending.apply_log(log)?;
        for i in 0..pending.clusters.len() {
            let c = &pending.clusters[i];
            if c.verdict.is_some() {
                continue;
            }
            let task_id = AnnotationTask::cluster_task_id(pending.round, c.cluster_id);
            let task = pending.board.get(&task_id).expect("task per cluster").clone();
            let verdict = annotator.judge(&task)?;
            log.append(&task_id, verdict, annotator.id())?;
            pending.record(&task_id, verdict)?;
        }
        Ok(())
    }

    /// Propagates verdicts and trains the next model.
    pub fn finalize_round(&self, pending: PendingRound<T>, prev: &RoundState<T>, provenance: Provenance) -> Result<RoundState<T>> {
        let (labels, log) = propagate_verdicts(self.table.refs(), &pending.clusters, pending.round, provenance)?;
        self.complete(pending.round, labels, pending.clusters, pending.class_summaries, log, Some(&prev.model))
    }

    pub fn run_round(&self, prev: &RoundState<T>, annotator: &dyn Annotator, log: &mut EventLog) -> Result<RoundState<T>> {
        let mut pending = self.prepare_round(prev)?;
        self.collect_verdicts(&mut pending, annotator, log)?;
        self.finalize_round(pending, prev, Provenance::Propagated)
    }

    /// Rebuilds a completed state from its persisted labels and clusters.
    pub fn restore_state(&self, store: &RoundStore, round: usize, prev: Option<&RoundState<T>>) -> Result<RoundState<T>> {
        let labels = store.load_labels(round)?;
        self.check_complete(&labels)?;
        let clusters = store.load_clusters::<T>(round)?;
        let summary = store.load_summary(round)?;
        let relabel_log = store.load_relabel_log(round)?;
        self.complete(round, labels, clusters, summary.class_summaries, relabel_log, prev.map(|p| &p.model))
    }

    /// Runs state 0 and `config.rounds` refinement rounds, persisting each
    /// state when a store is given and resuming from whatever it holds.
    pub fn run(
        &self,
        bootstrap: Vec<LabeledSentence>,
        annotator: &dyn Annotator,
        store: Option<&RoundStore>,
    ) -> Result<Vec<RoundState<T>>> {
        let mut states: Vec<RoundState<T>> = Vec::new();
        if let Some(s) = store {
            for k in s.completed_rounds()? {
                if k != states.len() || k > self.config.rounds {
                    break;
                }
                tracing::info!(round = k, "restoring persisted round");
                let st = self.restore_state(s, k, states.last())?;
                states.push(st);
            }
        }
        if states.is_empty() {
            let st = self.initial_state(bootstrap)?;
            if let Some(s) = store {
                s.save_state(&st, self.config.seed)?;
            }
            states.push(st);
        }
        while states.len() <= self.config.rounds {
            let prev = states.last().expect("state 0 present");
            let mut log = match store {
                Some(s) => s.event_log(prev.round + 1)?,
                None => EventLog::in_memory(),
            };
            let mut pending = self.prepare_round(prev)?;
            if let Some(s) = store {
                s.save_pending(&pending)?;
            }
            self.collect_verdicts(&mut pending, annotator, &mut log)?;
            let st = self.finalize_round(pending, prev, Provenance::Propagated)?;
            if let Some(s) = store {
                s.save_state(&st, self.config.seed)?;
            }
            states.push(st);
        }
        Ok(states)
    }
}

/// Settings of the end-to-end pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub weak: WeakLabelConfig,
    pub turn_train: TrainConfig,
    pub thresholds: BootstrapThresholds,
    pub refine: RefineConfig,
    pub seed: u64,
}

impl PipelineConfig {
    /// Copy with every stage seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.refine.seed = seeds::derive(seed, "refine", 0);
        c.turn_train.seed = seeds::derive(seed, "turn-train", 0);
        c
    }
}

/// Everything an end-to-end run produces.
#[derive(Clone, Debug)]
pub struct PipelineRun<T> {
    pub weak: WeakLabelOutcome,
    pub turn_model: TurnModel<T>,
    pub turn_model_eval: Option<TurnEvalReport>,
    pub states: Vec<RoundState<T>>,
}

/// Weak labeling, turn model, bootstrap and refinement in one call.
pub fn run_pipeline<T: Scalar>(
    corpus: &Corpus,
    provider: &EmbeddingProvider,
    gold: Option<&GroundTruth>,
    annotator: &dyn Annotator,
    config: &PipelineConfig,
    store: Option<&RoundStore>,
) -> Result<PipelineRun<T>> {
    let weak = weak_label::<T>(corpus, provider, annotator, &config.weak, seeds::derive(config.seed, "weak", 0))?;
    let (turn_model, _) = train_turn_model::<T>(&weak.dataset, corpus, provider, &config.turn_train)?;
    let turn_model_eval = match gold {
        Some(g) => Some(turn_model_eval(&turn_model, corpus, provider, g)?),
        None => None,
    };
    let bootstrap = bootstrap_corpus(&turn_model, corpus, provider, &config.thresholds)?;
    let ctx = RefineContext::new(corpus, provider, gold, config.refine.clone())?;
    let states = ctx.run(bootstrap, annotator, store)?;
    Ok(PipelineRun {
        weak,
        turn_model,
        turn_model_eval,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, class: SectionLabel, members: &[usize], verdict: Option<ClusterVerdict>) -> ClusterRecord<f64> {
        ClusterRecord {
            class,
            cluster_id: id,
            members: members.iter().map(|&i| SentenceRef::new("d", i, 0)).collect(),
            centroid: vec![],
            sample: vec![],
            verdict,
        }
    }

    fn order(n: usize) -> Vec<SentenceRef> {
        (0..n).map(|i| SentenceRef::new("d", i, 0)).collect()
    }

    #[test]
    fn verdicts_propagate_to_all_members() {
        let c = vec![
            record(0, SectionLabel::Other, &[0, 2, 4, 5, 6], Some(ClusterVerdict::CarePlan)),
            record(1, SectionLabel::Education, &[1, 3], Some(ClusterVerdict::Mixed)),
        ];
        let (labels, log) = propagate_verdicts(&order(7), &c, 2, Provenance::Human).unwrap();
        assert_eq!(labels.iter().filter(|l| l.label == ClusterVerdict::CarePlan).count(), 5);
        assert!(labels.iter().all(|l| l.provenance == Provenance::Human && l.round == 2));
        assert_eq!(labels[1].source_cluster, Some(1));
        assert_eq!(log.moved(), 2);
        assert_eq!(log.clusters_per_class()[SectionLabel::Other.index()], 1);
    }

    #[test]
    fn pending_clusters_are_listed() {
        let c = vec![
            record(0, SectionLabel::Other, &[0], None),
            record(1, SectionLabel::Other, &[1], Some(ClusterVerdict::Other)),
            record(2, SectionLabel::Other, &[2], None),
        ];
        match propagate_verdicts(&order(3), &c, 1, Provenance::Propagated) {
            Err(Error::PendingVerdicts(ids)) => assert_eq!(ids, vec![0, 2]),
            other => panic!("{other:?}"),
        }
        let labels: Vec<LabeledSentence> = Vec::new();
        assert!(matches!(view_of(&labels, &c), Err(Error::PendingVerdicts(_))));
    }

    #[test]
    fn view_drops_mixed() {
        let c = vec![
            record(0, SectionLabel::Other, &[0, 1, 2], Some(ClusterVerdict::Other)),
            record(1, SectionLabel::Other, &[3, 4], Some(ClusterVerdict::Mixed)),
        ];
        let (labels, _) = propagate_verdicts(&order(5), &c, 1, Provenance::Propagated).unwrap();
        assert_eq!(view_of(&labels, &c).unwrap().len(), 3);
    }

    #[test]
    fn uncovered_sentence_is_an_invariant_error() {
        let c = vec![record(0, SectionLabel::Other, &[0], Some(ClusterVerdict::Other))];
        assert!(matches!(
            propagate_verdicts(&order(2), &c, 1, Provenance::Propagated),
            Err(Error::Invariant { .. })
        ));
    }
}
