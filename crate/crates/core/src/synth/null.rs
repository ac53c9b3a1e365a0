//! Noise bounds for populations generated without group bias.
//!
//! Under a zero-bias profile identities are exchangeable across groups, so
//! reassigning the identity-to-group map at random (keeping group sizes)
//! draws from the null distribution of any group-level statistic. The
//! identity-level spread has no such symmetry to exploit; its bound comes
//! from regenerating the population under fresh seeds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{gen_population, seeded_rng, BiasProfile};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalOptions};
use crate::metrics::population_std;
use crate::pairwise::PairStatsAccumulator;

/// Stream id for permutation draws, separate from the generator's streams.
const STREAM_PERMUTATION: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    /// Fraction of permutations (counting the observed labelling) with a
    /// statistic at least as large as the observed one.
    pub p_value: f64,
    /// Largest statistic seen under permutation.
    pub null_max: f64,
    pub permutations: usize,
}

fn permutation_test(
    groups: &[u16],
    permutations: usize,
    seed: u64,
    stat: impl Fn(&[u16]) -> f64,
) -> PermutationTest {
    let observed = stat(groups);
    let mut rng = seeded_rng(seed, STREAM_PERMUTATION);
    let mut perm = groups.to_vec();
    let mut at_least = 0usize;
    let mut null_max = f64::NEG_INFINITY;
    for _ in 0..permutations {
        perm.shuffle(&mut rng);
        let s = stat(&perm);
        null_max = null_max.max(s);
        if s >= observed {
            at_least += 1;
        }
    }
    PermutationTest {
        observed,
        p_value: (1 + at_least) as f64 / (1 + permutations) as f64,
        null_max,
        permutations,
    }
}

fn check_layout(counts: &PairStatsAccumulator, identity_attr: &[u16]) -> Result<()> {
    if identity_attr.len() != counts.by_identity.len() {
        return Err(Error::Domain(
            "identity attributes do not match the pair counts".into(),
        ));
    }
    if let Some(&a) = identity_attr
        .iter()
        .find(|&&a| usize::from(a) >= counts.by_attribute.len())
    {
        return Err(Error::Domain(format!("attribute {a} out of range")));
    }
    Ok(())
}

/// Permutation test of the aFPR std. Each attribute's FP and negative counts
/// are sums over its identities, so permuted aFPR values are exact.
pub fn afpr_std_permutation_test(
    counts: &PairStatsAccumulator,
    identity_attr: &[u16],
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    check_layout(counts, identity_attr)?;
    let m = counts.by_attribute.len();
    let stat = |attr: &[u16]| {
        let mut fp = vec![0u64; m];
        let mut neg = vec![0u64; m];
        for (c, &a) in counts.by_identity.iter().zip(attr) {
            fp[usize::from(a)] += c.fp;
            neg[usize::from(a)] += c.negatives();
        }
        let rates: Vec<f64> = fp
            .iter()
            .zip(&neg)
            .filter(|(_, &n)| n > 0)
            .map(|(&f, &n)| f as f64 / n as f64)
            .collect();
        population_std(&rates).unwrap_or(0.0)
    };
    Ok(permutation_test(identity_attr, permutations, seed, stat))
}

/// Permutation test of how much iFPR varies between groups: the std of the
/// per-group means of iFPR.
pub fn ifpr_group_permutation_test(
    counts: &PairStatsAccumulator,
    identity_attr: &[u16],
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    check_layout(counts, identity_attr)?;
    let m = counts.by_attribute.len();
    let ifpr: Vec<Option<f64>> = counts.by_identity.iter().map(|c| c.fpr()).collect();
    let stat = |attr: &[u16]| {
        let mut sum = vec![0.0f64; m];
        let mut n = vec![0usize; m];
        for (r, &a) in ifpr.iter().zip(attr) {
            if let Some(r) = r {
                sum[usize::from(a)] += r;
                n[usize::from(a)] += 1;
            }
        }
        let means: Vec<f64> = sum
            .iter()
            .zip(&n)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        population_std(&means).unwrap_or(0.0)
    };
    Ok(permutation_test(identity_attr, permutations, seed, stat))
}

/// Upper bound on iFPR std for `profile` at `target_fpr`: the largest value
/// over `replicates` independent regenerations (seeds `seed + 1 ..`), i.e.
/// roughly the `replicates / (replicates + 1)` quantile of its sampling
/// distribution.
pub fn zero_bias_ifpr_std_bound(
    profile: &BiasProfile,
    target_fpr: f64,
    replicates: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<f64> {
    if replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    let opts = EvalOptions {
        target_fpr,
        k: opts.k.min(profile.num_identities().saturating_sub(1)).max(1),
        ..opts.clone()
    };
    let mut bound = 0.0f64;
    for r in 0..replicates as u64 {
        let (set, _) = gen_population(profile, seed.wrapping_add(1 + r))?;
        let eval = evaluate(&set, &opts)?;
        let std = eval.report.identities_summary.ifpr_std.ok_or_else(|| {
            Error::Degenerate("replicate has no defined iFPR".into())
        })?;
        bound = bound.max(std);
    }
    Ok(bound)
}
