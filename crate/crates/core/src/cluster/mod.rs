//! Dimensionality reduction and per-class clustering of model embeddings.

mod elbow;
mod graph;
mod kmeans;
mod pca;

use std::io::{BufRead, Write};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use elbow::{elbow_index, select_k_elbow, ElbowCurve};
pub use graph::{fuzzy_graph, knn, neighbor_embed, optimize_layout, smooth_bandwidth, spectral_layout, FuzzyGraph, GraphParams};
pub use kmeans::{kmeans, kmeanspp_cluster, kmeanspp_seed, lloyd, KMeansConfig, KMeansResult};
pub use pca::{pca_fit_transform, Pca};

use crate::corpus::SentenceRef;
use crate::linalg::Matrix;
use crate::model::ModelEmbedding;
use crate::{seeds, ClusterVerdict, Error, Result, Scalar, SectionLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionStages {
    PcaOnly,
    PcaGraph,
}

/// Whether reduction is fit on each predicted class separately or once on
/// all points before the per-class clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionScope {
    PerClass,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    pub pca_dim: usize,
    pub final_dim: usize,
    pub k_nn: usize,
    pub layout_epochs: usize,
    pub stages: ReductionStages,
    pub scope: ReductionScope,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            pca_dim: 250,
            final_dim: 50,
            k_nn: 15,
            layout_epochs: 200,
            stages: ReductionStages::PcaGraph,
            scope: ReductionScope::PerClass,
        }
    }
}

impl ReductionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_dim == 0 || self.final_dim > self.pca_dim || self.k_nn < 2 {
            return Err(Error::Config(format!(
                "reduction needs 0 < final_dim <= pca_dim and k_nn >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub reduction: ReductionConfig,
    pub k_min: usize,
    pub k_max: usize,
    pub sample_n: usize,
    pub kmeans: KMeansConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            reduction: ReductionConfig::default(),
            k_min: 2,
            k_max: 20,
            sample_n: 10,
            kmeans: KMeansConfig::default(),
        }
    }
}

/// One cluster of sentences that share a predicted class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord<T> {
    pub class: SectionLabel,
    pub cluster_id: usize,
    pub members: Vec<SentenceRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centroid: Vec<T>,
    pub sample: Vec<SentenceRef>,
    #[serde(default)]
    pub verdict: Option<ClusterVerdict>,
}

/// Reduction and k selection outcome for one predicted class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: SectionLabel,
    pub members: usize,
    pub graph_stage: bool,
    pub elbow: ElbowCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering<T> {
    pub records: Vec<ClusterRecord<T>>,
    pub classes: Vec<ClassSummary>,
}

/// Uniform sample without replacement of `min(sample_n, |members|)` members,
/// kept in member order.
pub fn sample_cluster<T>(record: &ClusterRecord<T>, sample_n: usize, seed: u64) -> Vec<SentenceRef> {
    let n = record.members.len();
    let mut rng = seeds::rng(seeds::derive(seed, "sample", record.cluster_id as u64));
    let mut idx = index::sample(&mut rng, n, sample_n.min(n)).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| record.members[i].clone()).collect()
}

/// Reduces `x` according to `config`. Small inputs fall back to PCA only.
/// Returns the reduced points and whether the graph stage ran.
pub fn reduce<T: Scalar>(x: &Matrix<T>, config: &ReductionConfig, seed: u64) -> Result<(Matrix<T>, bool)> {
    config.validate()?;
    let n = x.rows();
    let pca_dim = config.pca_dim.min(n).min(x.cols());
    let (_, y) = pca_fit_transform(x, pca_dim)?;
    if config.stages == ReductionStages::PcaOnly || n <= config.k_nn {
        return Ok((y, false));
    }
    let params = GraphParams {
        k_nn: config.k_nn,
        dim: config.final_dim.min(pca_dim),
        epochs: config.layout_epochs,
        seed,
    };
    Ok((neighbor_embed(&y, &params)?, true))
}

/// Clusters the embeddings of each predicted class independently.
/// Cluster ids are assigned in label order, then cluster order.
pub fn cluster_per_class<T: Scalar>(
    refs: &[SentenceRef],
    predicted: &[SectionLabel],
    embeddings: &Matrix<T>,
    config: &ClusterConfig,
    seed: u64,
) -> Result<Clustering<T>> {
    if refs.len() != predicted.len() || refs.len() != embeddings.rows() {
        return Err(Error::Precondition("refs, predictions and embeddings differ in length".into()));
    }
    config.reduction.validate()?;
    if config.k_min == 0 || config.k_min > config.k_max {
        return Err(Error::Config(format!("invalid k range {}..={}", config.k_min, config.k_max)));
    }
    let global = match config.reduction.scope {
        ReductionScope::Global if !refs.is_empty() => Some(reduce(embeddings, &config.reduction, seeds::derive(seed, "reduce", 99))?),
        _ => None,
    };
    let per_class: Vec<(SectionLabel, Vec<usize>)> = SectionLabel::ALL
        .into_iter()
        .map(|l| (l, (0..predicted.len()).filter(|&i| predicted[i] == l).collect::<Vec<_>>()))
        .filter(|(_, idx)| !idx.is_empty())
        .collect();
    let jobs: Vec<(ClassSummary, KMeansResult<T>, Vec<usize>)> = per_class
        .into_par_iter()
        .map(|(class, idx)| {
            let (z, graph_stage) = match &global {
                Some((g, used)) => (g.select_rows(&idx), *used),
                None => reduce(
                    &embeddings.select_rows(&idx),
                    &config.reduction,
                    seeds::derive(seed, "reduce", class.index() as u64),
                )?,
            };
            let k_max = config.k_max.min(idx.len());
            let k_min = config.k_min.min(k_max);
            let (elbow, result) =
                select_k_elbow(&z, k_min, k_max, &config.kmeans, seeds::derive(seed, "kselect", class.index() as u64))?;
            tracing::debug!(%class, members = idx.len(), k = elbow.chosen, graph_stage, "clustered class");
            let summary = ClassSummary {
                class,
                members: idx.len(),
                graph_stage,
                elbow,
            };
            Ok((summary, result, idx))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut classes = Vec::new();
    for (summary, result, idx) in jobs {
        for c in 0..result.centroids.rows() {
            let members: Vec<SentenceRef> = idx
                .iter()
                .zip(&result.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(&i, _)| refs[i].clone())
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut record = ClusterRecord {
                class: summary.class,
                cluster_id: records.len(),
                members,
                centroid: result.centroids.row(c).to_vec(),
                sample: Vec::new(),
                verdict: None,
            };
            record.sample = sample_cluster(&record, config.sample_n, seed);
            records.push(record);
        }
        classes.push(summary);
    }
    Ok(Clustering { records, classes })
}

/// Convenience wrapper over [`cluster_per_class`] for per-sentence embeddings.
pub fn cluster_model_embeddings<T: Scalar>(
    items: &[(SentenceRef, SectionLabel, ModelEmbedding<T>)],
    config: &ClusterConfig,
    seed: u64,
) -> Result<Clustering<T>> {
    let refs: Vec<SentenceRef> = items.iter().map(|i| i.0.clone()).collect();
    let predicted: Vec<SectionLabel> = items.iter().map(|i| i.1).collect();
    let rows: Vec<&[T]> = items.iter().map(|i| i.2.vector.as_slice()).collect();
    let x = if rows.is_empty() { Matrix::zeros(0, 0) } else { Matrix::from_rows(&rows)? };
    cluster_per_class(&refs, &predicted, &x, config, seed)
}

/// Writes one JSON record per cluster. Centroids are dropped unless requested.
pub fn write_clusters<T: Scalar + Serialize, W: Write>(
    records: &[ClusterRecord<T>],
    mut w: W,
    include_centroid: bool,
) -> Result<()> {
    for r in records {
        if include_centroid {
            serde_json::to_writer(&mut w, r)?;
        } else {
            let stripped = ClusterRecord::<T> {
                centroid: Vec::new(),
                ..r.clone()
            };
            serde_json::to_writer(&mut w, &stripped)?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_clusters<T: Scalar + for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<ClusterRecord<T>>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "clusters.jsonl".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
