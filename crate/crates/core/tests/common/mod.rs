//! Shared fixtures: random labelled sets and a naive all-pairs reference.

#![allow(dead_code)]

use fairface_core::pairwise::cosine_similarity;
use fairface_core::{EmbeddingSet, LabelTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Shape of a random set.
#[derive(Debug, Clone, Copy)]
pub struct SetShape {
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub m: usize,
    /// Round coordinates to small integers so that exact similarity ties occur.
    pub quantized: bool,
}

impl SetShape {
    /// Random shape within the given caps.
    pub fn random(rng: &mut impl Rng, max_n: usize, max_d: usize, max_g: usize, max_m: usize) -> Self {
        let g = rng.random_range(2..=max_g.min(max_n));
        let n = rng.random_range(g..=max_n);
        Self {
            n,
            d: rng.random_range(1..=max_d),
            g,
            m: rng.random_range(1..=max_m),
            quantized: rng.random_bool(0.3),
        }
    }
}

/// Clustered random set: identity centers plus per-image noise. Every
/// identity gets at least one image and one attribute.
pub fn random_set(shape: SetShape, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let SetShape { n, d, g, m, quantized } = shape;
    let spread: f64 = rng.random_range(0.1..1.5);
    let centers: Vec<Vec<f64>> = (0..g)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let attr_of: Vec<u16> = (0..g).map(|_| rng.random_range(0..m) as u16).collect();
    let mut identity: Vec<u32> = (0..g as u32).collect();
    identity.extend((g..n).map(|_| rng.random_range(0..g) as u32));
    let mut vectors = Vec::with_capacity(n * d);
    for &y in &identity {
        loop {
            let row: Vec<f32> = centers[y as usize]
                .iter()
                .map(|&c| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let v = c + spread * noise;
                    if quantized {
                        (v * 1.5).round().clamp(-3.0, 3.0) as f32
                    } else {
                        v as f32
                    }
                })
                .collect();
            if row.iter().any(|&x| x != 0.0) {
                vectors.extend(row);
                break;
            }
        }
    }
    let attribute = identity.iter().map(|&y| attr_of[y as usize]).collect();
    EmbeddingSet::new(d, vectors, identity, attribute, m, LabelTable::default()).expect("valid random set")
}

/// `[tp, fp, tn, fn]`.
pub type Quad = [u64; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveCounts {
    pub overall: Quad,
    pub by_attribute: Vec<Quad>,
    pub by_identity: Vec<Quad>,
}

/// Full `N x N` similarity matrix from the per-pair public kernel.
pub fn naive_similarities(set: &EmbeddingSet) -> Vec<f32> {
    let n = set.len();
    let mut s = vec![0.0f32; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s[i * n + j] = cosine_similarity(set.vector(i), set.vector(j)).unwrap();
            }
        }
    }
    s
}

/// Ordered-pair double loop: positive prediction iff `s > threshold`.
pub fn naive_counts(set: &EmbeddingSet, sims: &[f32], threshold: f32) -> NaiveCounts {
    let n = set.len();
    let mut out = NaiveCounts {
        overall: [0; 4],
        by_attribute: vec![[0; 4]; set.num_attributes()],
        by_identity: vec![[0; 4]; set.num_identities()],
    };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let positive = set.identities()[i] == set.identities()[j];
            let predicted = sims[i * n + j] > threshold;
            let slot = match (positive, predicted) {
                (true, true) => 0,
                (false, true) => 1,
                (false, false) => 2,
                (true, false) => 3,
            };
            out.overall[slot] += 1;
            out.by_attribute[set.attributes()[i] as usize][slot] += 1;
            out.by_identity[set.identities()[i] as usize][slot] += 1;
        }
    }
    out
}

/// Ordered negative similarities.
pub fn naive_negatives(set: &EmbeddingSet, sims: &[f32]) -> Vec<f32> {
    let n = set.len();
    let mut v = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && set.identities()[i] != set.identities()[j] {
                v.push(sims[i * n + j]);
            }
        }
    }
    v
}

/// Threshold by full sort: `(threshold, allowed, realized_fp, total)`;
/// `None` when the budget covers every negative.
pub fn naive_threshold(negatives: &[f32], target: f64) -> Option<(f32, u64, u64, u64)> {
    let total = negatives.len() as u64;
    let allowed = (target * total as f64).floor() as u64;
    if allowed >= total {
        return None;
    }
    let mut sorted = negatives.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let t = sorted[allowed as usize];
    let realized = negatives.iter().filter(|&&s| s > t).count() as u64;
    Some((t, allowed, realized, total))
}

pub fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn tpr(q: &Quad) -> Option<f64> {
    rate(q[0], q[0] + q[3])
}

pub fn fpr(q: &Quad) -> Option<f64> {
    rate(q[1], q[1] + q[2])
}

/// Population std of the defined entries.
pub fn naive_std(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

pub fn quad(c: &fairface_core::Confusion) -> Quad {
    [c.tp, c.fp, c.tn, c.fn_]
}

/// Engine accumulator equals the naive counts in every breakdown.
pub fn counts_match(acc: &fairface_core::PairStatsAccumulator, naive: &NaiveCounts) -> bool {
    quad(&acc.overall) == naive.overall
        && acc.by_attribute.iter().map(quad).eq(naive.by_attribute.iter().copied())
        && acc.by_identity.iter().map(quad).eq(naive.by_identity.iter().copied())
}

/// Every derived rate and aggregate of `rates` within `tol` of the naive values.
pub fn rates_match(rates: &fairface_core::RateSet, naive: &NaiveCounts, tol: f64) -> bool {
    let atpr: Vec<_> = naive.by_attribute.iter().map(tpr).collect();
    let afpr: Vec<_> = naive.by_attribute.iter().map(fpr).collect();
    let itpr: Vec<_> = naive.by_identity.iter().map(tpr).collect();
    let ifpr: Vec<_> = naive.by_identity.iter().map(fpr).collect();
    let all = |a: &[Option<f64>], b: &[Option<f64>]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
    };
    let avg = |v: &[Option<f64>]| {
        let d: Vec<f64> = v.iter().flatten().copied().collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    };
    close(rates.tpr, tpr(&naive.overall), tol)
        && close(rates.fpr, fpr(&naive.overall), tol)
        && all(&rates.attributes.atpr, &atpr)
        && all(&rates.attributes.afpr, &afpr)
        && all(&rates.identities.itpr, &itpr)
        && all(&rates.identities.ifpr, &ifpr)
        && close(rates.attributes.atpr_avg, avg(&atpr), tol)
        && close(rates.attributes.afpr_avg, avg(&afpr), tol)
        && close(rates.attributes.atpr_std, naive_std(&atpr), tol)
        && close(rates.attributes.afpr_std, naive_std(&afpr), tol)
        && close(rates.identities.ifpr_std, naive_std(&ifpr), tol)
}
