//! Exact overall-FPR threshold via two-pass histogram refinement, and the
//! confusion sweep at a fixed threshold.
//!
//! Pass one bins every negative similarity. The bin holding the target rank
//! is located from the cumulative counts, and pass two gathers only the
//! similarities inside that bin so the order statistic can be selected
//! exactly without materializing all pairs.

use serde::{Deserialize, Serialize};

use super::accumulator::PairStatsAccumulator;
use super::kernel::NormalizedRows;
use super::sweep::{sweep_upper, EngineConfig};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Histogram of negative-pair similarities over `[-1 - SLACK, 1 + SLACK]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegSimHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl NegSimHistogram {
    pub const SLACK: f64 = 1e-6;
    pub const LO: f64 = -1.0 - Self::SLACK;
    pub const HI: f64 = 1.0 + Self::SLACK;

    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
        }
        Ok(Self {
            counts: vec![0; bins],
            total: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn width(&self) -> f64 {
        (Self::HI - Self::LO) / self.bins() as f64
    }

    /// `floor((s - lo) / width)` clamped to the valid range; monotone in `s`.
    #[inline]
    pub fn bin_of(&self, s: f32) -> usize {
        let b = ((f64::from(s) - Self::LO) / self.width()).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.bins() - 1)
        }
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let w = self.width();
        (Self::LO + b as f64 * w, Self::LO + (b + 1) as f64 * w)
    }

    #[inline]
    pub fn add(&mut self, s: f32, weight: u64) {
        let b = self.bin_of(s);
        self.counts[b] += weight;
        self.total += weight;
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self
    }

    /// Bin containing 0-indexed descending rank `rank`, and the number of
    /// values in strictly higher bins.
    fn locate(&self, rank: u64) -> (usize, u64) {
        let mut above = 0u64;
        for b in (0..self.bins()).rev() {
            let c = self.counts[b];
            if rank < above + c {
                return (b, above);
            }
            above += c;
        }
        unreachable!("rank {rank} beyond histogram total {}", self.total)
    }
}

/// Outcome of the overall-FPR threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Cosine threshold; `-inf` when the budget covers every negative.
    pub threshold: f32,
    pub target_fpr: f64,
    pub allowed_fp: u64,
    pub realized_fp: u64,
    pub total_negatives: u64,
    /// Set when `allowed_fp >= total_negatives`; every pair is then accepted.
    pub degenerate: bool,
}

impl ThresholdResult {
    pub fn realized_fpr(&self) -> f64 {
        self.realized_fp as f64 / self.total_negatives as f64
    }
}

fn check_target(target_fpr: f64) -> Result<()> {
    if !(target_fpr > 0.0 && target_fpr <= 1.0) {
        return Err(Error::Config(format!(
            "target FPR must lie in (0, 1], got {target_fpr}"
        )));
    }
    Ok(())
}

pub fn allowed_false_positives(target_fpr: f64, total_negatives: u64) -> u64 {
    (target_fpr * total_negatives as f64).floor() as u64
}

enum Plan {
    Degenerate(ThresholdResult),
    Refine { bin: usize, above: u64, allowed: u64 },
}

fn plan(hist: &NegSimHistogram, target_fpr: f64) -> Result<Plan> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::Degenerate("dataset has no negative pairs".into()));
    }
    let allowed = allowed_false_positives(target_fpr, total);
    if allowed >= total {
        return Ok(Plan::Degenerate(ThresholdResult {
            threshold: f32::NEG_INFINITY,
            target_fpr,
            allowed_fp: allowed,
            realized_fp: total,
            total_negatives: total,
            degenerate: true,
        }));
    }
    let (bin, above) = hist.locate(allowed);
    Ok(Plan::Refine {
        bin,
        above,
        allowed,
    })
}

/// Picks the exact order statistic from the refined bin. Every gathered value
/// stands for `weight` ordered pairs.
fn finish(
    mut in_bin: Vec<f32>,
    weight: u64,
    above: u64,
    allowed: u64,
    target_fpr: f64,
    total: u64,
) -> ThresholdResult {
    in_bin.sort_unstable_by(|a, b| b.total_cmp(a));
    let idx = ((allowed - above) / weight) as usize;
    let threshold = in_bin[idx];
    let strictly_above = in_bin.iter().take_while(|&&s| s > threshold).count() as u64;
    ThresholdResult {
        threshold,
        target_fpr,
        allowed_fp: allowed,
        realized_fp: above + weight * strictly_above,
        total_negatives: total,
        degenerate: false,
    }
}

/// Runs the two-pass selection over an explicit multiset of negative
/// similarities.
pub fn threshold_from_values(values: &[f32], target_fpr: f64, bins: usize) -> Result<ThresholdResult> {
    check_target(target_fpr)?;
    let mut hist = NegSimHistogram::new(bins)?;
    for &s in values {
        hist.add(s, 1);
    }
    match plan(&hist, target_fpr)? {
        Plan::Degenerate(r) => Ok(r),
        Plan::Refine { bin, above, allowed } => {
            let in_bin = values.iter().copied().filter(|&s| hist.bin_of(s) == bin).collect();
            Ok(finish(in_bin, 1, above, allowed, target_fpr, hist.total()))
        }
    }
}

/// Histogram of all ordered negative-pair similarities.
pub fn sweep_histogram(set: &EmbeddingSet, bins: usize, cfg: &EngineConfig) -> Result<NegSimHistogram> {
    let store = NormalizedRows::from_set(set)?;
    histogram_pass(set, &store, bins, cfg)
}

fn histogram_pass(
    set: &EmbeddingSet,
    store: &NormalizedRows,
    bins: usize,
    cfg: &EngineConfig,
) -> Result<NegSimHistogram> {
    let empty = NegSimHistogram::new(bins)?;
    let ids = set.identities();
    sweep_upper(
        store,
        cfg,
        || empty.clone(),
        |h, i, j, s| {
            if ids[i] != ids[j] {
                h.add(s, 2);
            }
        },
        NegSimHistogram::merge,
    )
}

fn gather_bin(
    set: &EmbeddingSet,
    store: &NormalizedRows,
    hist: &NegSimHistogram,
    bin: usize,
    cfg: &EngineConfig,
) -> Result<Vec<f32>> {
    let ids = set.identities();
    sweep_upper(
        store,
        cfg,
        Vec::new,
        |v, i, j, s| {
            if ids[i] != ids[j] && hist.bin_of(s) == bin {
                v.push(s);
            }
        },
        |mut a, mut b| {
            a.append(&mut b);
            a
        },
    )
}

/// Finds `T_u`: the `(allowed + 1)`-th largest ordered negative similarity,
/// where `allowed = floor(target_fpr * negatives)`.
pub fn solve_threshold(
    set: &EmbeddingSet,
    target_fpr: f64,
    bins: usize,
    cfg: &EngineConfig,
) -> Result<ThresholdResult> {
    check_target(target_fpr)?;
    let store = NormalizedRows::from_set(set)?;
    let hist = histogram_pass(set, &store, bins, cfg)?;
    match plan(&hist, target_fpr)? {
        Plan::Degenerate(r) => Ok(r),
        Plan::Refine { bin, above, allowed } => {
            let in_bin = gather_bin(set, &store, &hist, bin, cfg)?;
            Ok(finish(in_bin, 2, above, allowed, target_fpr, hist.total()))
        }
    }
}

/// Confusion counts at `threshold`: a pair is predicted positive iff its
/// similarity is strictly greater than the threshold.
pub fn confusion_sweep(
    set: &EmbeddingSet,
    threshold: f32,
    cfg: &EngineConfig,
) -> Result<PairStatsAccumulator> {
    let store = NormalizedRows::from_set(set)?;
    sweep_upper(
        &store,
        cfg,
        || PairStatsAccumulator::for_set(set),
        |acc, i, j, s| acc.record_both(set, i, j, s > threshold),
        PairStatsAccumulator::merge,
    )
}

/// Threshold, confusion counts and the negative histogram of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub threshold: ThresholdResult,
    pub counts: PairStatsAccumulator,
    pub histogram: NegSimHistogram,
}

struct Refined {
    counts: PairStatsAccumulator,
    pending: Vec<(u32, u32, f32)>,
}

/// Fused evaluation in two sweeps instead of three: the refinement pass also
/// classifies every pair whose bin lies strictly above or below the target
/// bin, and keeps the (few) pairs inside it until the threshold is known.
pub fn evaluate_pairs(
    set: &EmbeddingSet,
    target_fpr: f64,
    bins: usize,
    cfg: &EngineConfig,
) -> Result<PairEvaluation> {
    check_target(target_fpr)?;
    set.require_evaluable()?;
    let store = NormalizedRows::from_set(set)?;
    let histogram = histogram_pass(set, &store, bins, cfg)?;
    let (bin, above, allowed) = match plan(&histogram, target_fpr)? {
        Plan::Degenerate(threshold) => {
            return Ok(PairEvaluation {
                threshold,
                counts: PairStatsAccumulator::all_predicted_positive(set),
                histogram,
            });
        }
        Plan::Refine { bin, above, allowed } => (bin, above, allowed),
    };

    let refined = sweep_upper(
        &store,
        cfg,
        || Refined {
            counts: PairStatsAccumulator::for_set(set),
            pending: Vec::new(),
        },
        |r, i, j, s| {
            let b = histogram.bin_of(s);
            if b == bin {
                r.pending.push((i as u32, j as u32, s));
            } else {
                r.counts.record_both(set, i, j, b > bin);
            }
        },
        |mut a, mut b| {
            a.counts.merge_from(&b.counts);
            a.pending.append(&mut b.pending);
            a
        },
    )?;

    let ids = set.identities();
    let negatives_in_bin: Vec<f32> = refined
        .pending
        .iter()
        .filter(|&&(i, j, _)| ids[i as usize] != ids[j as usize])
        .map(|&(_, _, s)| s)
        .collect();
    let threshold = finish(negatives_in_bin, 2, above, allowed, target_fpr, histogram.total());
    let mut counts = refined.counts;
    for &(i, j, s) in &refined.pending {
        counts.record_both(set, i as usize, j as usize, s > threshold.threshold);
    }
    debug_assert_eq!(counts.overall.fp, threshold.realized_fp);
    Ok(PairEvaluation {
        threshold,
        counts,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_of_four() {
        let r = threshold_from_values(&[0.9, 0.8, 0.7, 0.6], 0.25, 200).unwrap();
        assert_eq!(r.allowed_fp, 1);
        assert_eq!(r.threshold, 0.8);
        assert_eq!(r.realized_fp, 1);
        assert!(!r.degenerate);
    }

    #[test]
    fn tie_absorbs_budget() {
        let r = threshold_from_values(&[0.9, 0.9, 0.8], 1.0 / 3.0, 16).unwrap();
        assert_eq!(r.allowed_fp, 1);
        assert_eq!(r.threshold, 0.9);
        assert_eq!(r.realized_fp, 0);
    }

    #[test]
    fn zero_budget_picks_maximum() {
        let r = threshold_from_values(&[0.1, -0.3, 0.2], 0.1, 2).unwrap();
        assert_eq!(r.allowed_fp, 0);
        assert_eq!(r.threshold, 0.2);
        assert_eq!(r.realized_fp, 0);
    }

    #[test]
    fn full_budget_is_degenerate() {
        let r = threshold_from_values(&[0.1, 0.2], 1.0, 8).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.threshold, f32::NEG_INFINITY);
        assert_eq!(r.realized_fp, 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(threshold_from_values(&[0.1], 0.0, 8).is_err());
        assert!(threshold_from_values(&[0.1], 1.5, 8).is_err());
        assert!(threshold_from_values(&[0.1], 0.5, 1).is_err());
        assert!(matches!(
            threshold_from_values(&[], 0.5, 8),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn bin_index_clamps_and_is_monotone() {
        let h = NegSimHistogram::new(10).unwrap();
        assert_eq!(h.bin_of(-1.0), 0);
        assert_eq!(h.bin_of(1.0), 9);
        let mut prev = 0;
        for k in 0..=2000 {
            let b = h.bin_of(-1.0 + k as f32 * 1e-3);
            assert!(b >= prev);
            prev = b;
        }
    }
}
