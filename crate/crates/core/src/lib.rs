//! Fairness evaluation for face-recognition embeddings.
//!
//! The crate covers the whole evaluation path: an embedding container
//! ([`embedding`]), an exhaustive blocked pairwise engine that solves a
//! global false-positive-rate threshold exactly ([`pairwise`]), attribute-
//! and identity-level rate statistics ([`metrics`]), a synthetic population
//! generator with controllable group bias ([`synth`]), and a small training
//! stack for the MixFair adapter with hand-written gradients ([`mixfair`]).

pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod kv;
pub mod metrics;
pub mod mixfair;
pub mod pairwise;
pub mod synth;

pub use embedding::{normalize, EmbeddingSet, LabelTable, MeanVectors};
pub use error::{Error, Result};
pub use metrics::{FairnessReport, HistogramTable, RateSet};
pub use mixfair::{BiasTrace, ModelParams, TrainConfig};
pub use pairwise::{
    Confusion, EngineConfig, NegSimHistogram, PairStatsAccumulator, ThresholdResult,
};
pub use synth::{BiasProfile, SynthTruth};

/// Default overall false positive rate used to pick the verification threshold.
pub const DEFAULT_TARGET_FPR: f64 = 1e-5;
/// Default neighbourhood size for inter-identity similarity.
pub const DEFAULT_K: usize = 50;
/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 200;
