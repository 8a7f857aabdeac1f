use std::path::{Path, PathBuf};

use annotsvc::ServiceConfig;
use dialsec::bootstrap::BootstrapThresholds;
use dialsec::embed::{load_precomputed, EmbeddingProvider};
use dialsec::model::TrainConfig;
use dialsec::refine::{PipelineConfig, RefineConfig};
use dialsec::weakrules::WeakLabelConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Annotated default configuration written by `dialsec init`.
pub const TEMPLATE: &str = include_str!("../dialsec.toml");

pub const FILE_NAME: &str = "dialsec.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    Featurizer {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Precomputed {
        path: PathBuf,
    },
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Featurizer { dim: 256, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    pub tau: f64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self { tau: 0.7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub gold: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub embedding: EmbeddingSpec,
    pub annotator: AnnotatorConfig,
    pub service: ServiceConfig,
    pub weak: WeakLabelConfig,
    pub turn_train: TrainConfig,
    pub thresholds: BootstrapThresholds,
    pub refine: RefineConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: "corpus.jsonl".into(),
            gold: None,
            work_dir: "work".into(),
            embedding: EmbeddingSpec::default(),
            annotator: AnnotatorConfig::default(),
            service: ServiceConfig::default(),
            weak: WeakLabelConfig::default(),
            turn_train: TrainConfig::default(),
            thresholds: BootstrapThresholds::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl ProjectConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::data("config", e.to_string()))
    }

    /// Reads `path`, resolves relative paths against its directory and checks
    /// that referenced inputs exist. A missing file yields the defaults.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text).map_err(|e| e.context(path))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                tracing::warn!(path = %path.display(), "no project config, using defaults");
                Self::default()
            }
            Err(e) => return Err(CliError::input(path, e)),
        };
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus);
        join(&mut self.work_dir);
        if let Some(g) = &mut self.gold {
            join(g);
        }
        if let EmbeddingSpec::Precomputed { path } = &mut self.embedding {
            join(path);
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.annotator.tau) {
            return Err(CliError::data("config", format!("annotator.tau must lie in [0, 1], got {}", self.annotator.tau)));
        }
        self.thresholds.validate()?;
        self.turn_train.validate()?;
        self.refine.train.validate()?;
        let mut inputs: Vec<&Path> = Vec::new();
        if let Some(g) = &self.gold {
            inputs.push(g);
        }
        if let EmbeddingSpec::Precomputed { path } = &self.embedding {
            inputs.push(path);
        }
        for p in inputs {
            if !p.exists() {
                return Err(CliError::missing(p, "referenced by the project config"));
            }
        }
        Ok(())
    }

    /// Stage settings with every stage seed derived from `seed`.
    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            weak: self.weak.clone(),
            turn_train: self.turn_train.clone(),
            thresholds: self.thresholds,
            refine: self.refine.clone(),
            seed,
        }
        .with_seed(seed)
    }

    pub fn provider(&self, seed: u64) -> Result<EmbeddingProvider, CliError> {
        Ok(match &self.embedding {
            EmbeddingSpec::Featurizer { dim, seed: s } => EmbeddingProvider::featurizer(*dim, s.unwrap_or(seed)),
            EmbeddingSpec::Precomputed { path } => load_precomputed(path)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_spells_out_the_defaults() {
        assert_eq!(ProjectConfig::parse(TEMPLATE).unwrap(), ProjectConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ProjectConfig::parse("seed = 1\nrounds = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("g.jsonl"), "").unwrap();
        let path = dir.path().join(FILE_NAME);
        std::fs::write(&path, "gold = \"g.jsonl\"\nwork_dir = \"out\"\n").unwrap();
        let cfg = ProjectConfig::load(&path).unwrap();
        assert_eq!(cfg.gold.unwrap(), dir.path().join("g.jsonl"));
        assert_eq!(cfg.work_dir, dir.path().join("out"));
    }

    #[test]
    fn missing_referenced_files_fail_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(FILE_NAME);
        std::fs::write(&path, "gold = \"nope.jsonl\"\n").unwrap();
        let err = ProjectConfig::load(&path).unwrap_err();
        assert_eq!((err.exit_code(), err.code), (3, "missing_input"));
    }

    #[test]
    fn featurizer_seed_falls_back_to_the_master_seed() {
        let cfg = ProjectConfig::default();
        let a = cfg.provider(4).unwrap();
        let b = EmbeddingProvider::featurizer(256, 4);
        let (EmbeddingProvider::Featurizer(a), EmbeddingProvider::Featurizer(b)) = (a, b) else {
            panic!("featurizer expected");
        };
        assert_eq!((a.dim(), a.seed()), (b.dim(), b.seed()));
    }
}
