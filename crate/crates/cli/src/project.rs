use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use dialsec::corpus::{ingest_corpus, read_ground_truth, Corpus, GroundTruth};
use dialsec::embed::EmbeddingProvider;
use dialsec::refine::{write_atomic, PipelineConfig, RoundStore};
use serde::Serialize;

use crate::config::ProjectConfig;
use crate::error::CliError;

/// Locations of derived artifacts under the work directory.
#[derive(Clone, Debug)]
pub struct Paths {
    pub work: PathBuf,
}

impl Paths {
    pub fn corpus(&self) -> PathBuf {
        self.work.join("corpus.jsonl")
    }

    pub fn index(&self) -> PathBuf {
        self.work.join("index.json")
    }

    pub fn weak_dataset(&self) -> PathBuf {
        self.work.join("weak").join("dataset.jsonl")
    }

    pub fn weak_outcome(&self) -> PathBuf {
        self.work.join("weak").join("outcome.json")
    }

    pub fn weak_tasks(&self) -> PathBuf {
        self.work.join("weak").join("tasks.jsonl")
    }

    pub fn turn_model(&self) -> PathBuf {
        self.work.join("turn_model.bin")
    }

    pub fn turn_report(&self) -> PathBuf {
        self.work.join("turn_train.json")
    }

    pub fn bootstrap(&self) -> PathBuf {
        self.work.join("bootstrap.jsonl")
    }

    pub fn bootstrap_report(&self) -> PathBuf {
        self.work.join("bootstrap.json")
    }

    /// Root of the round store, which keeps rounds under `rounds/<k>/`.
    pub fn store_root(&self) -> PathBuf {
        self.work.clone()
    }

    pub fn eval(&self, k: usize) -> PathBuf {
        self.work.join("eval").join(format!("round-{k}.json"))
    }

    pub fn report(&self) -> PathBuf {
        self.work.join("report.md")
    }
}

/// Loaded configuration plus the effective seed of this invocation.
pub struct Project {
    pub config: ProjectConfig,
    pub paths: Paths,
    pub seed: u64,
}

impl Project {
    pub fn new(config: ProjectConfig, seed_override: Option<u64>) -> Self {
        let seed = seed_override.unwrap_or(config.seed);
        let paths = Paths {
            work: config.work_dir.clone(),
        };
        Self { config, paths, seed }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        self.config.pipeline(self.seed)
    }

    pub fn provider(&self) -> Result<EmbeddingProvider, CliError> {
        self.config.provider(self.seed)
    }

    pub fn store(&self) -> RoundStore {
        RoundStore::new(self.paths.store_root())
    }

    /// The corpus normalized by `ingest`.
    pub fn corpus(&self) -> Result<Corpus, CliError> {
        let path = self.paths.corpus();
        if !path.exists() {
            return Err(CliError::missing(&path, "run `dialsec ingest` first"));
        }
        Ok(ingest_corpus(&path)?)
    }

    /// Ground truth from `path`, falling back to the configured file.
    pub fn gold(&self, path: Option<&Path>, corpus: &Corpus) -> Result<Option<GroundTruth>, CliError> {
        let Some(path) = path.or(self.config.gold.as_deref()) else {
            return Ok(None);
        };
        load_gold(path, corpus).map(Some)
    }

    pub fn require(&self, path: &Path, step: &str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::missing(path, &format!("run `dialsec {step}` first")))
        }
    }
}

pub fn load_gold(path: &Path, corpus: &Corpus) -> Result<GroundTruth, CliError> {
    if !path.exists() {
        return Err(CliError::missing(path, "ground truth file"));
    }
    let gold = read_ground_truth(path)?;
    gold.validate(corpus)?;
    Ok(gold)
}

pub fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::input(path, e))
}

/// Writes `value` as pretty JSON through a temp file and rename.
pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(())
}

pub fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> dialsec::Result<()>) -> Result<(), CliError> {
    write_atomic(path, f)?;
    Ok(())
}
