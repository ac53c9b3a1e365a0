//! Exhaustive pairwise evaluation over ordered pairs `(i, j)`, `i != j`.
//!
//! The similarity kernel is symmetric bit-for-bit, so sweeps visit only the
//! strict upper triangle and credit each unordered pair to both orderings.

mod accumulator;
mod kernel;
mod sweep;
mod threshold;

use crate::embedding::MeanVectors;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

pub use accumulator::{Confusion, PairStatsAccumulator};
pub use kernel::NormalizedRows;
pub use sweep::EngineConfig;
pub use threshold::{
    allowed_false_positives, confusion_sweep, evaluate_pairs, solve_threshold, sweep_histogram,
    threshold_from_values, NegSimHistogram, PairEvaluation, ThresholdResult,
};

/// Cosine similarity in `[-1, 1]`, evaluated with the engine's kernel.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    kernel::cosine_pair(u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

pub fn pair_label(set: &EmbeddingSet, i: usize, j: usize) -> Result<PairLabel> {
    if i == j {
        return Err(Error::Domain(format!("pair ({i}, {j}) is not a pair of distinct images")));
    }
    if i >= set.len() || j >= set.len() {
        return Err(Error::Domain(format!("pair ({i}, {j}) out of range")));
    }
    Ok(if set.identities()[i] == set.identities()[j] {
        PairLabel::Positive
    } else {
        PairLabel::Negative
    })
}

/// Cosine similarity of two f64 vectors with precomputed norms.
#[inline]
pub(crate) fn cosine_f64(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    ((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail) / (norm_a * norm_b)
}

pub(crate) fn norm_f64(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn mean_norms(means: &MeanVectors) -> Result<Vec<f64>> {
    (0..means.len())
        .map(|k| {
            let n = norm_f64(means.mean(k));
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::Domain(format!("identity {k} has a zero mean vector")))
            }
        })
        .collect()
}

/// For every identity, the `k` other identities whose mean vectors are most
/// cosine-similar to its own; ties go to the lower index.
pub fn topk_neighbors(means: &MeanVectors, k: usize) -> Result<Vec<Vec<usize>>> {
    use rayon::prelude::*;

    let g = means.len();
    if k == 0 || k + 1 > g {
        return Err(Error::Domain(format!(
            "K must lie in [1, G-1] = [1, {}], got {k}",
            g.saturating_sub(1)
        )));
    }
    let norms = mean_norms(means)?;
    Ok((0..g)
        .into_par_iter()
        .map(|i| {
            let mut cands: Vec<(f64, usize)> = (0..g)
                .filter(|&j| j != i)
                .map(|j| (cosine_f64(means.mean(i), means.mean(j), norms[i], norms[j]), j))
                .collect();
            let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if k < cands.len() {
                cands.select_nth_unstable_by(k - 1, by_rank);
                cands.truncate(k);
            }
            cands.sort_unstable_by(by_rank);
            // fresh allocation: an in-place collect would keep the G-sized buffer alive
            let mut out = Vec::with_capacity(cands.len());
            out.extend(cands.iter().map(|&(_, j)| j));
            out
        })
        .collect())
}
