//! Tiled traversal of the strict upper triangle `i < j`.
//!
//! Each worker folds tiles into a private accumulator; accumulators are then
//! reduced with a caller-supplied merge. Callers only use commutative integer
//! merges (or sort merged buffers afterwards), so the result does not depend
//! on the schedule or the worker count.

use rayon::prelude::*;

use super::kernel::{similarity_tile, NormalizedRows};
use crate::error::{Error, Result};

/// Tiling and parallelism for pairwise sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    /// Rows per square tile.
    pub tile: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tile: 128,
            workers: 0,
        }
    }
}

impl EngineConfig {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_tile(mut self, tile: usize) -> Self {
        self.tile = tile;
        self
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        if self.tile == 0 {
            return Err(Error::Config("tile size must be positive".into()));
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if self.workers > 0 {
            builder = builder.num_threads(self.workers);
        }
        builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}

pub(crate) fn sweep_upper<A, I, V, M>(
    store: &NormalizedRows,
    cfg: &EngineConfig,
    init: I,
    visit: V,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    V: Fn(&mut A, usize, usize, f32) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    let pool = cfg.pool()?;
    let n = store.len();
    let t = cfg.tile;
    let blocks = n.div_ceil(t);
    let tiles: Vec<(usize, usize)> = (0..blocks)
        .flat_map(|bi| (bi..blocks).map(move |bj| (bi, bj)))
        .collect();

    let out = pool.install(|| {
        tiles
            .par_iter()
            .fold(
                || (init(), vec![0f32; t * t]),
                |(mut acc, mut buf), &(bi, bj)| {
                    let rows = bi * t..((bi + 1) * t).min(n);
                    let cols = bj * t..((bj + 1) * t).min(n);
                    let width = cols.len();
                    similarity_tile(store, rows.clone(), cols.clone(), &mut buf);
                    for i in rows.clone() {
                        let line = &buf[(i - rows.start) * width..(i - rows.start + 1) * width];
                        let first = if bi == bj { i + 1 } else { cols.start };
                        for j in first..cols.end {
                            visit(&mut acc, i, j, line[j - cols.start]);
                        }
                    }
                    (acc, buf)
                },
            )
            .map(|(acc, _)| acc)
            .reduce(&init, &merge)
    });
    Ok(out)
}
