//! Intra- and inter-identity cosine similarity of mean vectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, MeanVectors};
use crate::error::{Error, Result};
use crate::pairwise::{cosine_f64, mean_norms, norm_f64, topk_neighbors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub k: usize,
    /// Mean cosine of each identity's images to its own mean vector.
    pub intra: Vec<f64>,
    /// Mean cosine of each identity's mean to its `k` closest other means.
    pub inter: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
}

pub fn intra_inter_similarity(
    set: &EmbeddingSet,
    means: &MeanVectors,
    k: usize,
) -> Result<SimilarityProfile> {
    if means.len() != set.num_identities() || means.dim() != set.dim() {
        return Err(Error::Domain("mean vectors do not belong to this dataset".into()));
    }
    let neighbors = topk_neighbors(means, k)?;
    let norms = mean_norms(means)?;

    let cos_to_mean: Vec<f64> = set
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .zip(set.identities().par_iter())
        .map(|(row, &y)| {
            let f: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
            let y = y as usize;
            cosine_f64(&f, means.mean(y), norm_f64(&f), norms[y])
        })
        .collect();
    let mut intra = vec![0.0f64; means.len()];
    for (c, &y) in cos_to_mean.iter().zip(set.identities()) {
        intra[y as usize] += c;
    }
    for (s, &n) in intra.iter_mut().zip(means.counts()) {
        *s /= n as f64;
    }

    let inter = neighbors
        .iter()
        .enumerate()
        .map(|(i, nn)| {
            nn.iter()
                .map(|&j| cosine_f64(means.mean(j), means.mean(i), norms[j], norms[i]))
                .sum::<f64>()
                / k as f64
        })
        .collect();

    Ok(SimilarityProfile {
        k,
        intra,
        inter,
        neighbors,
    })
}
