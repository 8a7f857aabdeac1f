//! Functional section labeling for two-party dialogues.
//!
//! Every professional sentence of a dialogue is assigned one of five
//! functional sections (history taking, summarization, education, care plan,
//! other). Labels start from weak turn-level supervision that is transferred
//! to sentences, and are then refined round by round: a sentence classifier is
//! trained, its hidden-layer embeddings are clustered separately for every
//! predicted class, and an annotator relabels whole clusters (or marks them
//! `Mixed`, which removes their members from the next training set).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); concrete
//! aliases for the common instantiations live at the crate root.

pub mod annotate;
pub mod bootstrap;
pub mod cluster;
pub mod corpus;
pub mod embed;
mod error;
mod label;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod refine;
mod scalar;
pub mod seeds;
pub mod weakrules;

pub use error::{Error, ErrorKind, Result};
pub use label::{ClusterVerdict, SectionLabel};
pub use scalar::Scalar;

/// Dense matrix over `f64`.
pub type Matrix64 = linalg::Matrix<f64>;
/// Dense matrix over `f32`.
pub type Matrix32 = linalg::Matrix<f32>;

/// Turn-level multilabel model in double precision.
pub type TurnModel64 = model::TurnModel<f64>;
/// Turn-level multilabel model in single precision.
pub type TurnModel32 = model::TurnModel<f32>;
/// Sentence-level multiclass model in double precision.
pub type SentenceModel64 = model::SentenceModel<f64>;
/// Sentence-level multiclass model in single precision.
pub type SentenceModel32 = model::SentenceModel<f32>;

/// Cluster record with a double precision centroid.
pub type ClusterRecord64 = cluster::ClusterRecord<f64>;
/// Refinement round snapshot in double precision.
pub type RoundState64 = refine::RoundState<f64>;
/// Refinement round snapshot in single precision.
pub type RoundState32 = refine::RoundState<f32>;
/// Complete pipeline output in double precision.
pub type PipelineRun64 = refine::PipelineRun<f64>;
/// Complete pipeline output in single precision.
pub type PipelineRun32 = refine::PipelineRun<f32>;
