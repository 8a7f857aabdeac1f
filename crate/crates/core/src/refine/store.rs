use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PendingRound, RelabelLog, RoundMetrics, RoundState};
use crate::annotate::{AnnotationTask, EventLog, TaskBoard};
use crate::bootstrap::{read_labels, write_labels, LabeledSentence};
use crate::cluster::{read_clusters, write_clusters, ClassSummary, ClusterRecord};
use crate::model::{load_model, save_model, ModelArtifact, SentenceModel};
use crate::{Error, Result, Scalar};

/// Contents of `state.json`. Its presence marks a round as complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub labels: usize,
    pub mixed: usize,
    pub clusters: usize,
    pub class_summaries: Vec<ClassSummary>,
    pub train_losses: Vec<f64>,
    pub seed: u64,
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Round artifacts under `<root>/rounds/<k>/`.
#[derive(Clone, Debug)]
pub struct RoundStore {
    root: PathBuf,
}

impl RoundStore {
    pub const LABELS: &'static str = "labels.jsonl";
    pub const CLUSTERS: &'static str = "clusters.jsonl";
    pub const CLASSES: &'static str = "classes.json";
    pub const VERDICTS: &'static str = "verdicts.jsonl";
    pub const MODEL: &'static str = "model.bin";
    pub const METRICS: &'static str = "metrics.json";
    pub const RELABEL_LOG: &'static str = "relabel_log.json";
    pub const STATE: &'static str = "state.json";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn round_dir(&self, k: usize) -> PathBuf {
        self.root.join("rounds").join(k.to_string())
    }

    pub fn path(&self, k: usize, file: &str) -> PathBuf {
        self.round_dir(k).join(file)
    }

    /// Rounds that have a directory, complete or not, ascending.
    pub fn rounds(&self) -> Result<Vec<usize>> {
        let dir = self.root.join("rounds");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for e in fs::read_dir(dir)? {
            let e = e?;
            if let Some(k) = e.file_name().to_str().and_then(|s| s.parse().ok()) {
                if e.file_type()?.is_dir() {
                    out.push(k);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn is_complete(&self, k: usize) -> bool {
        self.path(k, Self::STATE).exists()
    }

    pub fn completed_rounds(&self) -> Result<Vec<usize>> {
        Ok(self.rounds()?.into_iter().filter(|&k| self.is_complete(k)).collect())
    }

    /// Persists clusters and class summaries of a round awaiting verdicts.
    pub fn save_pending<T: Scalar>(&self, pending: &PendingRound<T>) -> Result<()> {
        let k = pending.round;
        if self.is_complete(k) {
            return Err(Error::RoundOrder(format!("round {k} is already complete")));
        }
        write_atomic(&self.path(k, Self::CLUSTERS), |w| write_clusters(&pending.clusters, w, false))?;
        write_json(&self.path(k, Self::CLASSES), &pending.class_summaries)
    }

    /// Reloads a pending round and applies every logged verdict.
    pub fn load_pending<T: Scalar>(&self, k: usize) -> Result<PendingRound<T>> {
        let clusters = self.load_clusters::<T>(k)?;
        let class_summaries: Vec<ClassSummary> = read_json(&self.path(k, Self::CLASSES))?;
        let board = TaskBoard::new(clusters.iter().map(|r| AnnotationTask::for_cluster(k, r)));
        let mut pending = PendingRound {
            round: k,
            clusters,
            class_summaries,
            board,
        };
        let log = self.event_log(k)?;
        pending.apply_log(&log)?;
        Ok(pending)
    }

    /// Writes every artifact of a completed state, `state.json` last.
    pub fn save_state<T: Scalar>(&self, state: &RoundState<T>, seed: u64) -> Result<()> {
        let k = state.round;
        write_atomic(&self.path(k, Self::LABELS), |w| write_labels(&state.labels, w))?;
        if k > 0 {
            write_atomic(&self.path(k, Self::CLUSTERS), |w| write_clusters(&state.clusters, w, false))?;
            write_json(&self.path(k, Self::CLASSES), &state.class_summaries)?;
        }
        write_json(&self.path(k, Self::RELABEL_LOG), &state.relabel_log)?;
        let model = ModelArtifact::Sentence(state.model.clone());
        let tmp = self.path(k, ".model.bin.tmp");
        save_model(&model, &tmp)?;
        fs::rename(&tmp, self.path(k, Self::MODEL))?;
        if let Some(m) = &state.metrics {
            write_json(&self.path(k, Self::METRICS), m)?;
        }
        write_json(&self.path(k, Self::STATE), &state.summary(seed))
    }

    pub fn load_labels(&self, k: usize) -> Result<Vec<LabeledSentence>> {
        read_labels(BufReader::new(File::open(self.path(k, Self::LABELS))?))
    }

    pub fn load_clusters<T: Scalar>(&self, k: usize) -> Result<Vec<ClusterRecord<T>>> {
        let p = self.path(k, Self::CLUSTERS);
        if k == 0 && !p.exists() {
            return Ok(Vec::new());
        }
        read_clusters(BufReader::new(File::open(p)?))
    }

    pub fn load_summary(&self, k: usize) -> Result<RoundSummary> {
        read_json(&self.path(k, Self::STATE))
    }

    pub fn load_relabel_log(&self, k: usize) -> Result<RelabelLog> {
        read_json(&self.path(k, Self::RELABEL_LOG))
    }

    pub fn load_metrics(&self, k: usize) -> Result<Option<RoundMetrics>> {
        let p = self.path(k, Self::METRICS);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn load_model<T: Scalar>(&self, k: usize) -> Result<SentenceModel<T>> {
        match load_model(&self.path(k, Self::MODEL))? {
            ModelArtifact::Sentence(m) => Ok(m),
            ModelArtifact::Turn(_) => Err(Error::ModelFormat(format!("round {k} holds a turn model"))),
        }
    }

    /// The append-only verdict log of round `k`, created on first use.
    pub fn event_log(&self, k: usize) -> Result<EventLog> {
        fs::create_dir_all(self.round_dir(k))?;
        EventLog::open(&self.path(k, Self::VERDICTS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ClusterVerdict;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"first")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"2")?)).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "2");
        assert!(!dir.path().join("a/.b.txt.tmp").exists());
    }

    #[test]
    fn failed_write_leaves_previous_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, |w| Ok(w.write_all(b"ok")?)).unwrap();
        let r = write_atomic(&p, |w| {
            w.write_all(b"partial")?;
            Err(Error::Precondition("stop".into()))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_to_string(&p).unwrap(), "ok");
    }

    #[test]
    fn rounds_listed_in_numeric_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = RoundStore::new(dir.path());
        for k in [10, 2, 0] {
            fs::create_dir_all(store.round_dir(k)).unwrap();
        }
        fs::create_dir_all(dir.path().join("rounds/tmp")).unwrap();
        assert_eq!(store.rounds().unwrap(), vec![0, 2, 10]);
        assert!(store.completed_rounds().unwrap().is_empty());
    }

    #[test]
    fn event_log_persists_between_opens() {
        let dir = tempfile::tempdir().unwrap();
        let store = RoundStore::new(dir.path());
        store.event_log(1).unwrap().append("r1-c0", ClusterVerdict::Other, "a").unwrap();
        let log = store.event_log(1).unwrap();
        assert_eq!(log.events().len(), 1);
        assert_eq!(log.latest()["r1-c0"], ClusterVerdict::Other);
    }
}
