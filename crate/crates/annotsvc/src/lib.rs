//! HTTP service through which annotators judge the clusters of a refinement
//! round.
//!
//! Every verdict is appended to the round's event log and synced before the
//! request is acknowledged, so a restarted service rebuilds the same task
//! statuses from disk. Finalizing a round propagates its verdicts and hands
//! the judged round to whoever trains the next model.

mod error;
mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use dialsec::annotate::{AnnotationTask, EventLog, TaskStatus, VerdictEvent};
use dialsec::bootstrap::Provenance;
use dialsec::corpus::{Corpus, SentenceRef};
use dialsec::refine::{propagate_verdicts, PendingRound, RelabelEntry, RelabelLog, RoundStore};
use dialsec::{ClusterVerdict, Error, Result, SectionLabel};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::UnboundedSender;

pub use error::{ApiError, ErrorBody};
pub use routes::router;

/// Service settings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Static bearer token; `None` disables authentication.
    pub token: Option<String>,
    /// Annotator id recorded when a verdict request names none.
    pub default_annotator: Option<String>,
}

struct OpenRound {
    pending: PendingRound<f32>,
    log: EventLog,
}

#[derive(Default)]
struct Rounds {
    open: BTreeMap<usize, OpenRound>,
    finalized: BTreeMap<usize, RelabelLog>,
}

/// Shared state behind the HTTP routes.
pub struct Service {
    corpus: Arc<Corpus>,
    order: Vec<SentenceRef>,
    store: RoundStore,
    config: ServiceConfig,
    rounds: Mutex<Rounds>,
    finalized_tx: Option<UnboundedSender<PendingRound<f32>>>,
}

/// Progress of one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub round: usize,
    pub status: RoundStatus,
    pub tasks: usize,
    pub done: usize,
    pub pending: usize,
    pub clusters_per_class: BTreeMap<SectionLabel, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    /// Accepting verdicts.
    Open,
    /// Verdicts propagated; the next model is being trained.
    Finalized,
    /// Persisted with labels, model and metrics.
    Complete,
}

/// Response to an accepted verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictAck {
    pub task: AnnotationTask,
    pub event: VerdictEvent,
}

/// Relabel log of a finalized round with per-class totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalizeSummary {
    pub round: usize,
    pub clusters: usize,
    pub moved: usize,
    pub mixed: usize,
    pub clusters_per_class: BTreeMap<SectionLabel, usize>,
    pub log: RelabelLog,
}

impl FinalizeSummary {
    pub fn from_log(log: RelabelLog) -> Self {
        let per_class = log.clusters_per_class();
        Self {
            round: log.round,
            clusters: log.entries.len(),
            moved: log.moved(),
            mixed: log.entries.iter().filter(|e| e.verdict.is_mixed()).count(),
            clusters_per_class: SectionLabel::ALL.iter().map(|&l| (l, per_class[l.index()])).collect(),
            log,
        }
    }
}

fn per_class(tasks: &[AnnotationTask]) -> BTreeMap<SectionLabel, usize> {
    let mut out = BTreeMap::new();
    for t in tasks {
        if let Some(c) = t.class {
            *out.entry(c).or_default() += 1;
        }
    }
    out
}

/// Round number encoded in a cluster task id (`r<k>-c<id>`).
pub fn round_of_task(task_id: &str) -> Option<usize> {
    task_id.strip_prefix('r')?.split_once("-c")?.0.parse().ok()
}

impl Service {
    /// Opens every round in `store` that has clusters but no completed state,
    /// replaying its event log.
    pub fn open(corpus: Arc<Corpus>, store: RoundStore, config: ServiceConfig) -> Result<Self> {
        let mut rounds = Rounds::default();
        for k in store.rounds()? {
            if store.is_complete(k) || !store.path(k, RoundStore::CLUSTERS).exists() {
                continue;
            }
            let pending = store.load_pending::<f32>(k)?;
            let log = store.event_log(k)?;
            tracing::info!(round = k, tasks = pending.board.len(), verdicts = log.events().len(), "resumed round");
            rounds.open.insert(k, OpenRound { pending, log });
        }
        let order = corpus.professional_sentences().map(|(r, _, _)| r).collect();
        Ok(Self {
            corpus,
            order,
            store,
            config,
            rounds: Mutex::new(rounds),
            finalized_tx: None,
        })
    }

    /// Sends each finalized round to `tx`.
    pub fn with_finalize_channel(mut self, tx: UnboundedSender<PendingRound<f32>>) -> Self {
        self.finalized_tx = Some(tx);
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn store(&self) -> &RoundStore {
        &self.store
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, Rounds> {
        self.rounds.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persists and opens a freshly clustered round.
    pub fn open_round(&self, pending: PendingRound<f32>) -> Result<()> {
        let k = pending.round;
        self.store.save_pending(&pending)?;
        let log = self.store.event_log(k)?;
        let mut pending = pending;
        pending.apply_log(&log)?;
        self.lock().open.insert(k, OpenRound { pending, log });
        Ok(())
    }

    pub fn round_infos(&self) -> Result<Vec<RoundInfo>> {
        let rounds = self.lock();
        let mut out: BTreeMap<usize, RoundInfo> = BTreeMap::new();
        for k in self.store.completed_rounds()? {
            let summary = self.store.load_summary(k)?;
            let tasks = self.completed_tasks(k)?;
            out.insert(
                k,
                RoundInfo {
                    round: k,
                    status: RoundStatus::Complete,
                    tasks: tasks.len(),
                    done: tasks.len(),
                    pending: 0,
                    clusters_per_class: per_class(&tasks),
                    labels: Some(summary.labels),
                    mixed: Some(summary.mixed),
                },
            );
        }
        for (&k, r) in &rounds.open {
            let tasks: Vec<AnnotationTask> = r.pending.board.tasks().cloned().collect();
            let pending = tasks.iter().filter(|t| t.status == TaskStatus::Pending).count();
            out.entry(k).or_insert(RoundInfo {
                round: k,
                status: if rounds.finalized.contains_key(&k) { RoundStatus::Finalized } else { RoundStatus::Open },
                tasks: tasks.len(),
                done: tasks.len() - pending,
                pending,
                clusters_per_class: per_class(&tasks),
                labels: None,
                mixed: None,
            });
        }
        Ok(out.into_values().collect())
    }

    fn completed_tasks(&self, k: usize) -> Result<Vec<AnnotationTask>> {
        Ok(self
            .store
            .load_clusters::<f32>(k)?
            .iter()
            .map(|c| AnnotationTask::for_cluster(k, c))
            .collect())
    }

    /// Cluster tasks of round `k`, optionally filtered by status.
    pub fn tasks(&self, k: usize, status: Option<TaskStatus>) -> Result<Vec<AnnotationTask>> {
        let tasks: Vec<AnnotationTask> = match self.lock().open.get(&k) {
            Some(r) => r.pending.board.tasks().cloned().collect(),
            None if self.store.is_complete(k) => self.completed_tasks(k)?,
            None => return Err(Error::RoundOrder(format!("round {k} has no clusters"))),
        };
        Ok(tasks.into_iter().filter(|t| status.is_none_or(|s| t.status == s)).collect())
    }

    pub fn task(&self, task_id: &str) -> Result<AnnotationTask> {
        let k = round_of_task(task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        if let Some(r) = self.lock().open.get(&k) {
            return r.pending.board.get(task_id).cloned().ok_or_else(|| Error::UnknownTask(task_id.to_string()));
        }
        if self.store.is_complete(k) {
            return self
                .completed_tasks(k)?
                .into_iter()
                .find(|t| t.task_id == task_id)
                .ok_or_else(|| Error::UnknownTask(task_id.to_string()));
        }
        Err(Error::UnknownTask(task_id.to_string()))
    }

    /// Logs and applies a verdict. The event is on disk before this returns.
    pub fn submit(&self, task_id: &str, verdict: ClusterVerdict, annotator_id: Option<&str>) -> Result<VerdictAck> {
        let k = round_of_task(task_id).ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        let mut rounds = self.lock();
        if rounds.finalized.contains_key(&k) {
            return Err(Error::RoundOrder(format!("round {k} is already finalized")));
        }
        let Some(r) = rounds.open.get_mut(&k) else {
            if self.store.is_complete(k) {
                return Err(Error::RoundOrder(format!("round {k} is already complete")));
            }
            return Err(Error::UnknownTask(task_id.to_string()));
        };
        if r.pending.board.get(task_id).is_none() {
            return Err(Error::UnknownTask(task_id.to_string()));
        }
        let annotator = annotator_id
            .or(self.config.default_annotator.as_deref())
            .unwrap_or("anonymous");
        let event = r.log.append(task_id, verdict, annotator)?;
        r.pending.record(task_id, verdict)?;
        let task = r.pending.board.get(task_id).expect("checked above").clone();
        Ok(VerdictAck { task, event })
    }

    /// Propagates the verdicts of round `k`. Repeated calls return the same
    /// log; pending tasks are an error.
    pub fn finalize(&self, k: usize) -> Result<FinalizeSummary> {
        let mut rounds = self.lock();
        if let Some(log) = rounds.finalized.get(&k) {
            return Ok(FinalizeSummary::from_log(log.clone()));
        }
        let Some(r) = rounds.open.get(&k) else {
            if self.store.is_complete(k) {
                return Ok(FinalizeSummary::from_log(self.store.load_relabel_log(k)?));
            }
            return Err(Error::RoundOrder(format!("round {k} is not open")));
        };
        let pending = r.pending.board.pending_clusters();
        if !pending.is_empty() {
            return Err(Error::PendingVerdicts(pending));
        }
        let (_, log) = propagate_verdicts(&self.order, &r.pending.clusters, k, Provenance::Human)?;
        if let Some(tx) = &self.finalized_tx {
            if tx.send(r.pending.clone()).is_err() {
                tracing::warn!(round = k, "no trainer is listening for finalized rounds");
            }
        }
        rounds.finalized.insert(k, log.clone());
        tracing::info!(round = k, clusters = log.entries.len(), moved = log.moved(), "round finalized");
        Ok(FinalizeSummary::from_log(log))
    }

    /// Relabel log of the clusters judged so far in an open round.
    pub fn finalize_preview(&self, k: usize) -> Result<RelabelLog> {
        let rounds = self.lock();
        if let Some(log) = rounds.finalized.get(&k) {
            return Ok(log.clone());
        }
        let r = rounds
            .open
            .get(&k)
            .ok_or_else(|| Error::RoundOrder(format!("round {k} is not open")))?;
        Ok(RelabelLog {
            round: k,
            entries: r
                .pending
                .clusters
                .iter()
                .filter_map(|c| {
                    c.verdict.map(|verdict| RelabelEntry {
                        class: c.class,
                        cluster_id: c.cluster_id,
                        members: c.members.len(),
                        verdict,
                    })
                })
                .collect(),
        })
    }

    /// Forgets an open round once its completed state is on disk.
    pub fn close_round(&self, k: usize) {
        let mut rounds = self.lock();
        rounds.open.remove(&k);
        rounds.finalized.remove(&k);
    }
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    service: Arc<Service>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    serve_listener(service, tokio::net::TcpListener::bind(addr).await?, shutdown).await
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_listener(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_ids_encode_rounds() {
        assert_eq!(round_of_task("r2-c17"), Some(2));
        assert_eq!(round_of_task(&AnnotationTask::cluster_task_id(11, 0)), Some(11));
        assert_eq!(round_of_task("t-mixed-d-1"), None);
        assert_eq!(round_of_task("rx-c1"), None);
    }
}
