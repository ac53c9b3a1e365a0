//! Shared fixtures for the benchmarks.

use fairface_core::mixfair::{pair_samples, Batch};
use fairface_core::synth::{gen_population, BiasProfile};
use fairface_core::{EmbeddingSet, ModelParams};

/// Synthetic set of `groups * per_group * images` rows of dimension `dim`.
pub fn population(groups: usize, per_group: usize, images: usize, dim: usize) -> EmbeddingSet {
    let profile = BiasProfile::uniform(groups, per_group, images, dim, 0.5, 0.8);
    gen_population(&profile, 1).expect("valid profile").0
}

/// Model and batch for loss and gradient timing.
pub fn training_batch(d_in: usize, d_k: usize, d_f: usize, n_id: usize, batch: usize) -> (ModelParams, Batch) {
    let params = ModelParams::init(d_in, d_k, d_f, n_id, 3).expect("positive dimensions");
    let x = ndarray::Array2::from_shape_fn((batch, d_in), |(r, c)| ((r * 31 + c * 17) % 13) as f64 / 6.5 - 1.0);
    let y: Vec<usize> = (0..batch).map(|i| i % n_id).collect();
    let partner = pair_samples(&y, 5, 0).expect("at least two identities");
    (params, Batch { x, y, partner })
}
