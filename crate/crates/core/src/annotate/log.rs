//! Append-only verdict event log, one JSON record per line.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::{ClusterVerdict, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub seq: u64,
    pub task_id: String,
    pub verdict: ClusterVerdict,
    pub annotator_id: String,
    #[serde(with = "utc_millis")]
    pub timestamp: DateTime<Utc>,
}

mod utc_millis {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Latest verdict per task.
pub fn replay(events: &[VerdictEvent]) -> BTreeMap<String, ClusterVerdict> {
    let mut out = BTreeMap::new();
    for e in events {
        out.insert(e.task_id.clone(), e.verdict);
    }
    out
}

/// Event log backed by a file, or held in memory when no path is given.
#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<VerdictEvent>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
            events: Vec::new(),
        }
    }

    /// Opens or creates the log and replays it. A final line without a
    /// newline that fails to parse is treated as an interrupted write and
    /// cut off; any other damage or a gap in sequence numbers is an error.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).truncate(false).read(true).append(true).open(path)?;
        let mut events: Vec<VerdictEvent> = Vec::new();
        let mut valid_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                let complete = line.ends_with('\n');
                if line.trim().is_empty() {
                    valid_len += n as u64;
                    continue;
                }
                match serde_json::from_str::<VerdictEvent>(line.trim_end()) {
                    Ok(e) => {
                        let want = events.last().map_or(1, |p| p.seq + 1);
                        if e.seq != want {
                            return Err(Error::CorruptLog(format!(
                                "{}:{lineno}: sequence {} follows {}",
                                path.display(),
                                e.seq,
                                want - 1
                            )));
                        }
                        events.push(e);
                        valid_len += n as u64;
                    }
                    Err(_) if !complete => {
                        tracing::warn!(path = %path.display(), line = lineno, "dropping torn final record");
                        break;
                    }
                    Err(err) => {
                        return Err(Error::CorruptLog(format!("{}:{lineno}: {err}", path.display())));
                    }
                }
            }
        }
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            file: Some(file),
            events,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[VerdictEvent] {
        &self.events
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    /// Appends and syncs an event before returning it.
    pub fn append(&mut self, task_id: &str, verdict: ClusterVerdict, annotator_id: &str) -> Result<VerdictEvent> {
        self.append_at(task_id, verdict, annotator_id, Utc::now())
    }

    pub fn append_at(
        &mut self,
        task_id: &str,
        verdict: ClusterVerdict,
        annotator_id: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<VerdictEvent> {
        let event = VerdictEvent {
            seq: self.next_seq(),
            task_id: task_id.to_string(),
            verdict,
            annotator_id: annotator_id.to_string(),
            timestamp,
        };
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&event)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.events.push(event.clone());
        Ok(event)
    }

    pub fn latest(&self) -> BTreeMap<String, ClusterVerdict> {
        replay(&self.events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reopen_replays_and_continues_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("verdicts.jsonl");
        let mut log = EventLog::open(&p).unwrap();
        log.append("a", ClusterVerdict::Education, "x").unwrap();
        log.append("a", ClusterVerdict::Mixed, "y").unwrap();
        drop(log);
        let mut log = EventLog::open(&p).unwrap();
        assert_eq!(log.events().len(), 2);
        assert_eq!(log.latest()["a"], ClusterVerdict::Mixed);
        assert_eq!(log.append("b", ClusterVerdict::Other, "x").unwrap().seq, 3);
    }

    #[test]
    fn torn_tail_is_dropped_and_gap_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jsonl");
        let mut log = EventLog::open(&p).unwrap();
        log.append("a", ClusterVerdict::Education, "x").unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"seq\":2,\"task_id\":\"b\",\"ver").unwrap();
        drop(f);
        let mut log = EventLog::open(&p).unwrap();
        assert_eq!(log.events().len(), 1);
        assert_eq!(log.append("b", ClusterVerdict::Other, "x").unwrap().seq, 2);
        drop(log);
        assert_eq!(EventLog::open(&p).unwrap().events().len(), 2);

        let text = std::fs::read_to_string(&p).unwrap().replace("\"seq\":2", "\"seq\":4");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(EventLog::open(&p), Err(Error::CorruptLog(_))));
    }
}
