//! Raw training sets: per-identity train/eval partitions of a population.

use rand::seq::SliceRandom;

use super::{gen_population, seeded_rng, BiasProfile, STREAM_SHUFFLE, STREAM_SPLIT};
use crate::embedding::{EmbeddingSet, LabelTable};
use crate::error::{Error, Result};

/// Rows of raw vectors with dense identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub dim: usize,
    /// Row-major, `len() * dim` values.
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    /// Index of each row in the source population.
    pub source: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub num_identities: usize,
    pub num_attributes: usize,
    pub identity_attribute: Vec<u16>,
    pub labels: LabelTable,
    pub train: Partition,
    pub eval: Partition,
}

impl TrainingSet {
    /// Holds out `eval_per_identity` images of each identity (fewer when the
    /// identity would otherwise have no training image). The choice is a
    /// seeded shuffle within each identity.
    pub fn from_embeddings(set: &EmbeddingSet, eval_per_identity: usize, seed: u64) -> Result<Self> {
        if set.num_identities() < 2 {
            return Err(Error::Validation(
                "training needs at least 2 identities".into(),
            ));
        }
        let dim = set.dim();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); set.num_identities()];
        for (i, &y) in set.identities().iter().enumerate() {
            members[y as usize].push(i);
        }
        let mut rng = seeded_rng(seed, STREAM_SPLIT);
        let mut train_idx = Vec::new();
        let mut eval_idx = Vec::new();
        for imgs in &mut members {
            imgs.shuffle(&mut rng);
            let held = eval_per_identity.min(imgs.len() - 1);
            let (ev, tr) = imgs.split_at(held);
            eval_idx.extend_from_slice(ev);
            train_idx.extend_from_slice(tr);
        }
        train_idx.sort_unstable();
        eval_idx.sort_unstable();
        let take = |idx: Vec<usize>| Partition {
            dim,
            x: idx
                .iter()
                .flat_map(|&i| set.vector(i).iter().map(|&v| f64::from(v)))
                .collect(),
            y: idx.iter().map(|&i| set.identities()[i] as usize).collect(),
            source: idx,
        };
        Ok(Self {
            num_identities: set.num_identities(),
            num_attributes: set.num_attributes(),
            identity_attribute: set.identity_attributes(),
            labels: set.labels().clone(),
            train: take(train_idx),
            eval: take(eval_idx),
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim
    }
}

/// Generates a `d_in`-dimensional population from `profile` and splits a
/// quarter of each identity's images (at least one) into the eval partition.
pub fn gen_training_set(profile: &BiasProfile, d_in: usize, seed: u64) -> Result<TrainingSet> {
    if profile.num_identities() < 2 {
        return Err(Error::Validation(
            "training needs at least 2 identities".into(),
        ));
    }
    let profile = BiasProfile {
        dim: d_in,
        ..profile.clone()
    };
    let (set, _) = gen_population(&profile, seed)?;
    let held = (profile.images_per_identity / 4).max(1);
    TrainingSet::from_embeddings(&set, held, seed)
}

/// Sample visiting order for one epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed, STREAM_SHUFFLE);
    // 2^36 words per epoch is far more than one shuffle consumes.
    rng.set_word_pos(u128::from(epoch) << 36);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> BiasProfile {
        BiasProfile::uniform(2, 6, 8, 5, 0.8, 0.3)
    }

    fn counts(p: &Partition, g: usize) -> Vec<usize> {
        let mut c = vec![0; g];
        for &y in &p.y {
            c[y] += 1;
        }
        c
    }

    #[test]
    fn partitions_are_disjoint_and_complete() {
        let ts = gen_training_set(&profile(), 7, 1).unwrap();
        assert_eq!(ts.dim(), 7);
        assert_eq!(ts.train.len() + ts.eval.len(), 96);
        for s in &ts.eval.source {
            assert!(!ts.train.source.contains(s));
        }
        assert_eq!(counts(&ts.eval, 12), vec![2; 12]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = gen_training_set(&profile(), 7, 9).unwrap();
        let b = gen_training_set(&profile(), 7, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reshuffle_preserves_identity_counts() {
        let (set, _) = gen_population(&profile(), 4).unwrap();
        let a = TrainingSet::from_embeddings(&set, 2, 1).unwrap();
        let b = TrainingSet::from_embeddings(&set, 2, 2).unwrap();
        assert_ne!(a.eval.source, b.eval.source);
        assert_eq!(counts(&a.train, 12), counts(&b.train, 12));
        let order = epoch_order(a.train.len(), 3, 0);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..a.train.len()).collect::<Vec<_>>());
        assert_ne!(order, epoch_order(a.train.len(), 3, 1));
        assert_eq!(order, epoch_order(a.train.len(), 3, 0));
    }

    #[test]
    fn single_image_identities_stay_in_train() {
        let p = BiasProfile::uniform(1, 3, 1, 4, 1.0, 0.1);
        let (set, _) = gen_population(&p, 0).unwrap();
        let ts = TrainingSet::from_embeddings(&set, 5, 0).unwrap();
        assert!(ts.eval.is_empty());
        assert_eq!(ts.train.len(), 3);
    }

    #[test]
    fn one_identity_rejected() {
        let p = BiasProfile::uniform(1, 1, 4, 4, 1.0, 0.1);
        assert!(gen_training_set(&p, 4, 0).is_err());
    }
}
