//! End-to-end evaluation of one embedding set: threshold, counts, rates,
//! intra/inter similarity and the report.

use crate::embedding::{mean_vectors, EmbeddingSet};
use crate::error::{Error, Result};
use crate::metrics::{build_report, intra_inter_similarity, FairnessReport, ReportConfig, SimilarityProfile};
use crate::pairwise::{evaluate_pairs, EngineConfig, PairEvaluation};
use crate::{DEFAULT_BINS, DEFAULT_K, DEFAULT_TARGET_FPR};

/// Bins of the negative-similarity histogram used by the threshold solver.
/// The result does not depend on it; more bins keep the refinement set small.
pub const THRESHOLD_BINS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub target_fpr: f64,
    pub k: usize,
    /// Bins of the intra/inter similarity histograms in the report.
    pub bins: usize,
    pub threshold_bins: usize,
    pub engine: EngineConfig,
    /// Recorded in the report when the input came from a seeded generator.
    pub seed: Option<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            target_fpr: DEFAULT_TARGET_FPR,
            k: DEFAULT_K,
            bins: DEFAULT_BINS,
            threshold_bins: THRESHOLD_BINS,
            engine: EngineConfig::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: FairnessReport,
    pub pairs: PairEvaluation,
    pub similarity: SimilarityProfile,
}

/// Intra/inter similarity only.
pub fn analyze(set: &EmbeddingSet, k: usize) -> Result<SimilarityProfile> {
    if set.num_identities() < 2 {
        return Err(Error::Degenerate(
            "inter-identity similarity needs at least 2 identities".into(),
        ));
    }
    intra_inter_similarity(set, &mean_vectors(set), k)
}

/// [`analyze`] on the worker pool of `engine`.
pub fn analyze_with(set: &EmbeddingSet, k: usize, engine: &EngineConfig) -> Result<SimilarityProfile> {
    engine.pool()?.install(|| analyze(set, k))
}

pub fn evaluate(set: &EmbeddingSet, opts: &EvalOptions) -> Result<Evaluation> {
    let pairs = evaluate_pairs(set, opts.target_fpr, opts.threshold_bins, &opts.engine)?;
    let similarity = analyze_with(set, opts.k, &opts.engine)?;
    let report = build_report(
        set,
        &pairs,
        &similarity,
        ReportConfig::new(opts.k, opts.bins, opts.seed),
    )?;
    Ok(Evaluation {
        report,
        pairs,
        similarity,
    })
}
