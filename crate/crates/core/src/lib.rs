//! Rating-level conversion, logit-based quality scoring, IQA evaluation
//! metrics, instruction-dataset plumbing and a two-stage data-mixture ratio
//! search with loss-ratio feedback.
//!
//! Model training is never performed here. Anything that needs a trained
//! model goes through the [`oracle::Oracle`] trait, which maps a sampled
//! training manifest to validation performances and losses.

pub mod controller;
pub mod datasets;
pub mod error;
pub mod levels;
mod linalg;
pub mod manifest;
pub mod metrics;
pub mod mixopt;
pub mod oracle;
pub mod rng;
pub mod scoring;

pub use controller::{
    decide, run_loop, Action, AdjustPlan, ControlParams, EpochObservation, LoopConfig, Trajectory,
};
pub use datasets::{MosRecord, PoolTag};
pub use error::{Error, ErrorClass, Result};
pub use levels::{
    level_to_score, mos_from_frequencies, score_to_level, FrequencyVector, LevelScale, RatingLevel,
};
pub use manifest::{sample_mixture, MixtureCounts, MixturePools};
pub use metrics::{avg_metric, plcc, srcc, PairedSample};
pub use mixopt::{coarse_search, CoarseResult, MixRatio, SearchConfig};
pub use oracle::{ExternalOracle, Oracle, OracleRequest, OracleResponse, SyntheticOracle};
pub use scoring::{
    binary_score, score_from_logits, softmax_levels, LevelLogits, LevelProbabilities,
    PredictedScore,
};

/// Version string recorded in persisted run records.
pub const TOOL_VERSION: &str = concat!("iqamix ", env!("CARGO_PKG_VERSION"));
