//! Pairwise engine against a naive ordered-pair double loop.

mod common;

use common::*;
use fairface_core::pairwise::*;
use fairface_core::{EmbeddingSet, LabelTable};
use proptest::prelude::*;

fn set_from(dim: usize, vectors: Vec<f32>, identity: Vec<u32>, attribute: Vec<u16>, m: usize) -> EmbeddingSet {
    EmbeddingSet::new(dim, vectors, identity, attribute, m, LabelTable::default()).unwrap()
}

fn textbook_cosine(u: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
    let nu: f64 = u.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
    dot / (nu * nv)
}

#[test]
fn cosine_of_worked_example() {
    let s = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
    assert!((f64::from(s) - 8.0 / 9.0).abs() < 1e-6);
}

#[test]
fn threshold_examples_by_enumeration() {
    let r = threshold_from_values(&[0.9, 0.8, 0.7, 0.6], 0.25, 16).unwrap();
    assert_eq!((r.threshold, r.allowed_fp, r.realized_fp), (0.8, 1, 1));

    // a tie at the cut absorbs the budget
    let r = threshold_from_values(&[0.9, 0.9, 0.8], 0.4, 16).unwrap();
    assert_eq!((r.threshold, r.allowed_fp, r.realized_fp), (0.9, 1, 0));

    let r = threshold_from_values(&[0.1, 0.2], 1.0, 16).unwrap();
    assert!(r.degenerate && r.threshold == f32::NEG_INFINITY);
}

#[test]
fn separable_set_has_zero_false_positives() {
    // two tight clusters far apart: every negative lies below every positive
    let set = set_from(
        2,
        vec![1.0, 0.01, 1.0, -0.01, 1.0, 0.0, -0.01, 1.0, 0.01, 1.0, 0.0, 1.0],
        vec![0, 0, 0, 1, 1, 1],
        vec![0; 6],
        1,
    );
    let sims = naive_similarities(&set);
    let negs = naive_negatives(&set, &sims);
    let max_neg = negs.iter().copied().fold(f32::MIN, f32::max);
    let cfg = EngineConfig::default();
    let r = solve_threshold(&set, 1e-3, 64, &cfg).unwrap();
    assert_eq!(r.allowed_fp, 0);
    assert_eq!(r.threshold, max_neg);
    assert_eq!(r.realized_fp, 0);
    let acc = confusion_sweep(&set, r.threshold, &cfg).unwrap();
    assert_eq!(acc.overall.tpr(), Some(1.0));
}

#[test]
fn histogram_equals_naive_binning() {
    let set = random_set(SetShape { n: 500, d: 16, g: 40, m: 3, quantized: false }, 11);
    let sims = naive_similarities(&set);
    let bins = 200;
    let hist = sweep_histogram(&set, bins, &EngineConfig::default().with_workers(3)).unwrap();
    let lo = -1.0 - 1e-6;
    let width = (1.0 + 1e-6 - lo) / bins as f64;
    let mut naive = vec![0u64; bins];
    for s in naive_negatives(&set, &sims) {
        let b = ((f64::from(s) - lo) / width).floor().max(0.0) as usize;
        naive[b.min(bins - 1)] += 1;
    }
    assert_eq!(hist.counts(), &naive[..]);
    assert_eq!(hist.total(), naive.iter().sum::<u64>());
}

#[test]
fn histogram_of_small_sets() {
    let single = set_from(2, vec![1.0, 0.0, 0.0, 1.0], vec![0, 0], vec![0, 0], 1);
    assert_eq!(sweep_histogram(&single, 8, &EngineConfig::default()).unwrap().total(), 0);
    let three = set_from(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![0, 1, 2], vec![0; 3], 1);
    assert_eq!(sweep_histogram(&three, 8, &EngineConfig::default()).unwrap().total(), 6);
}

#[test]
fn confusion_sweep_equals_naive_at_arbitrary_thresholds() {
    let set = random_set(SetShape { n: 300, d: 8, g: 30, m: 4, quantized: false }, 5);
    let sims = naive_similarities(&set);
    let cfg = EngineConfig::default().with_tile(32).with_workers(2);
    for t in [-0.5f32, 0.0, 0.3, 0.77, 0.95] {
        let acc = confusion_sweep(&set, t, &cfg).unwrap();
        assert!(counts_match(&acc, &naive_counts(&set, &sims, t)), "threshold {t}");
    }
    let acc = confusion_sweep(&set, 1.0, &cfg).unwrap();
    assert_eq!((acc.overall.tp, acc.overall.fp), (0, 0));
    assert_eq!(acc.overall.fn_, acc.overall.positives());
    let acc = confusion_sweep(&set, -1.5, &cfg).unwrap();
    assert_eq!((acc.overall.fn_, acc.overall.tn), (0, 0));
}

#[test]
fn evaluate_pairs_equals_naive_with_ties() {
    for seed in 0..6 {
        let shape = SetShape { n: 150 + 40 * seed as usize, d: 3, g: 12, m: 2, quantized: true };
        let set = random_set(shape, 100 + seed);
        let sims = naive_similarities(&set);
        let negs = naive_negatives(&set, &sims);
        for target in [1e-3, 0.02, 0.3] {
            let ev = evaluate_pairs(&set, target, 4096, &EngineConfig::default().with_tile(7)).unwrap();
            let (t, allowed, realized, total) = naive_threshold(&negs, target).unwrap();
            assert_eq!(ev.threshold.threshold, t);
            assert_eq!(
                (ev.threshold.allowed_fp, ev.threshold.realized_fp, ev.threshold.total_negatives),
                (allowed, realized, total)
            );
            assert!(counts_match(&ev.counts, &naive_counts(&set, &sims, t)));
        }
    }
}

#[test]
fn topk_examples() {
    use fairface_core::MeanVectors;
    let means = MeanVectors::from_parts(2, vec![1.0, 0.0, 0.0, 1.0, 0.9, 0.1], vec![1; 3]).unwrap();
    assert_eq!(topk_neighbors(&means, 1).unwrap()[0], vec![2]);
    let all = topk_neighbors(&means, 2).unwrap();
    assert_eq!(all[1], vec![2, 0]);
    assert!(topk_neighbors(&means, 3).is_err());

    let tied = MeanVectors::from_parts(2, vec![1.0, 0.0, 0.5, 0.5, 0.5, 0.5], vec![1; 3]).unwrap();
    assert_eq!(topk_neighbors(&tied, 1).unwrap()[0], vec![1]);
}

#[test]
fn pair_labels() {
    let set = set_from(1, vec![1.0, 2.0, 3.0], vec![0, 0, 1], vec![0; 3], 1);
    assert_eq!(pair_label(&set, 0, 1).unwrap(), PairLabel::Positive);
    assert_eq!(pair_label(&set, 2, 0).unwrap(), PairLabel::Negative);
    assert!(pair_label(&set, 1, 1).is_err());
}

fn small_set() -> impl Strategy<Value = (SetShape, u64)> {
    (2usize..60, 1usize..12, 2usize..10, 1usize..4, any::<bool>(), any::<u64>()).prop_map(
        |(n, d, g, m, quantized, seed)| {
            let g = g.min(n);
            (SetShape { n, d, g, m, quantized }, seed)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_symmetric_and_accurate(
        u in prop::collection::vec(-10.0f32..10.0, 1..40),
        seed in any::<u64>(),
    ) {
        let v: Vec<f32> = u.iter().enumerate().map(|(i, &x)| x * 0.5 - (seed % 7) as f32 + i as f32 * 0.1).collect();
        prop_assume!(u.iter().any(|&x| x != 0.0) && v.iter().any(|&x| x != 0.0));
        let a = cosine_similarity(&u, &v).unwrap();
        let b = cosine_similarity(&v, &u).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!((f64::from(a) - textbook_cosine(&u, &v)).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn counts_independent_of_tiling_and_workers(
        (shape, seed) in small_set(),
        tile in 1usize..40,
        workers in 1usize..5,
        t in -1.0f32..1.0,
    ) {
        let set = random_set(shape, seed);
        let reference = confusion_sweep(&set, t, &EngineConfig::default().with_tile(1024).with_workers(1)).unwrap();
        let other = confusion_sweep(&set, t, &EngineConfig::default().with_tile(tile).with_workers(workers)).unwrap();
        prop_assert_eq!(&reference, &other);
        prop_assert!(reference.is_consistent());
        // each unordered pair is credited to both orderings
        let o = reference.overall;
        prop_assert!(o.tp % 2 == 0 && o.fp % 2 == 0 && o.tn % 2 == 0 && o.fn_ % 2 == 0);
        let n = set.len() as u64;
        prop_assert_eq!(o.total(), n * (n - 1));
    }

    #[test]
    fn threshold_tight_and_bin_invariant(
        (shape, seed) in small_set(),
        log_target in -4.0f64..-0.2,
    ) {
        let set = random_set(shape, seed);
        let target = 10f64.powf(log_target);
        let sims = naive_similarities(&set);
        let negs = naive_negatives(&set, &sims);
        prop_assume!(!negs.is_empty());
        let cfg = EngineConfig::default().with_tile(5);
        let first = solve_threshold(&set, target, 2, &cfg).unwrap();
        for bins in [16, 200, 4096] {
            prop_assert_eq!(solve_threshold(&set, target, bins, &cfg).unwrap(), first);
        }
        match naive_threshold(&negs, target) {
            None => prop_assert!(first.degenerate),
            Some((t, allowed, realized, total)) => {
                prop_assert_eq!(first.threshold, t);
                prop_assert_eq!((first.allowed_fp, first.realized_fp, first.total_negatives), (allowed, realized, total));
                prop_assert!(realized <= allowed);
                let at_or_above = negs.iter().filter(|&&s| s >= t).count() as u64;
                prop_assert!(at_or_above > allowed);
            }
        }
    }
}
