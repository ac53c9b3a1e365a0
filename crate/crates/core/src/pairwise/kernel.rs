//! Cosine similarity kernel shared by every pairwise path.
//!
//! Rows are normalized once (in f64, rounded to f32) and stored widened to
//! f64 and zero-padded to a multiple of [`LANES`]. A dot product accumulates
//! lane-striped in f64 and folds the lanes in a fixed order, so the scalar
//! kernel and the blocked tile kernel produce bit-identical similarities.
//! Products of two f32 values are exact in f64, which makes fused and
//! unfused multiply-add agree as well.

use crate::embedding::{normalize, EmbeddingSet};
use crate::error::Result;

pub(crate) const LANES: usize = 4;
type Chunk = [f64; LANES];

/// Unit-normalized copy of a set's vectors in the kernel layout.
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    n: usize,
    chunks_per_row: usize,
    data: Vec<Chunk>,
}

impl NormalizedRows {
    pub fn from_set(set: &EmbeddingSet) -> Result<Self> {
        Self::from_rows(set.dim(), set.rows())
    }

    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let chunks_per_row = dim.div_ceil(LANES);
        let rows = rows.into_iter();
        // reserve up front: growth by doubling would briefly hold two copies
        let mut data = Vec::with_capacity(rows.size_hint().0 * chunks_per_row);
        let mut n = 0;
        for row in rows {
            push_row(&mut data, row, chunks_per_row)?;
            n += 1;
        }
        Ok(Self {
            n,
            chunks_per_row,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[Chunk] {
        &self.data[i * self.chunks_per_row..(i + 1) * self.chunks_per_row]
    }

    pub fn similarity(&self, i: usize, j: usize) -> f32 {
        to_similarity(dot(self.row(i), self.row(j)))
    }
}

fn push_row(data: &mut Vec<Chunk>, row: &[f32], chunks_per_row: usize) -> Result<()> {
    let unit = normalize(row)?;
    let start = data.len();
    data.resize(start + chunks_per_row, [0.0; LANES]);
    for (c, &x) in unit.iter().enumerate() {
        data[start + c / LANES][c % LANES] = f64::from(x);
    }
    Ok(())
}

/// Normalizes both inputs into the kernel layout and evaluates the shared dot.
pub(crate) fn cosine_pair(u: &[f32], v: &[f32]) -> Result<f32> {
    let chunks = u.len().div_ceil(LANES);
    let mut a = Vec::with_capacity(chunks);
    let mut b = Vec::with_capacity(chunks);
    push_row(&mut a, u, chunks)?;
    push_row(&mut b, v, chunks)?;
    Ok(to_similarity(dot(&a, &b)))
}

#[inline(always)]
fn fold(acc: Chunk) -> f64 {
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline(always)]
pub(crate) fn to_similarity(x: f64) -> f32 {
    (x as f32).clamp(-1.0, 1.0)
}

#[inline(always)]
fn madd<const FUSED: bool>(acc: f64, x: f64, y: f64) -> f64 {
    if FUSED {
        x.mul_add(y, acc)
    } else {
        acc + x * y
    }
}

#[inline]
pub(crate) fn dot(a: &[Chunk], b: &[Chunk]) -> f64 {
    let mut acc = [0.0; LANES];
    for (x, y) in a.iter().zip(b) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    fold(acc)
}

const MR: usize = 4;
const NR: usize = 2;

/// Fills `out[(i - rows.start) * cols.len() + (j - cols.start)]` with the
/// similarity of rows `i` and `j`.
pub(crate) fn similarity_tile(
    store: &NormalizedRows,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    out: &mut [f32],
) {
    debug_assert!(out.len() >= rows.len() * cols.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { tile_avx2(store, rows, cols, out) };
            return;
        }
    }
    tile_impl::<false>(store, rows, cols, out);
}

/// Register-blocked 4x3 microkernel; leftover rows and columns go through
/// the scalar dot product, which rounds identically.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tile_avx2(
    store: &NormalizedRows,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    out: &mut [f32],
) {
    use std::arch::x86_64::*;
    const R: usize = 4;
    const Q: usize = 3;
    let width = cols.len();
    let len = store.chunks_per_row;
    // transmute rather than loadu: same codegen, no debug-build copy checks
    let load = |x: &Chunk| std::mem::transmute::<Chunk, __m256d>(*x);
    let mut set = |i: usize, j: usize, v: f64| {
        out[(i - rows.start) * width + (j - cols.start)] = to_similarity(v);
    };
    let mut i = rows.start;
    while i + R <= rows.end {
        let a: [&[Chunk]; R] = std::array::from_fn(|r| &store.row(i + r)[..len]);
        let mut j = cols.start;
        while j + Q <= cols.end {
            let b: [&[Chunk]; Q] = std::array::from_fn(|q| &store.row(j + q)[..len]);
            let mut acc = [[_mm256_setzero_pd(); Q]; R];
            for c in 0..len {
                let bv: [__m256d; Q] = std::array::from_fn(|q| load(&b[q][c]));
                for r in 0..R {
                    let av = load(&a[r][c]);
                    for q in 0..Q {
                        acc[r][q] = _mm256_fmadd_pd(av, bv[q], acc[r][q]);
                    }
                }
            }
            for r in 0..R {
                for q in 0..Q {
                    let lanes = std::mem::transmute::<__m256d, Chunk>(acc[r][q]);
                    set(i + r, j + q, fold(lanes));
                }
            }
            j += Q;
        }
        for jj in j..cols.end {
            for r in 0..R {
                set(i + r, jj, dot(store.row(i + r), store.row(jj)));
            }
        }
        i += R;
    }
    for ii in i..rows.end {
        for jj in cols.clone() {
            set(ii, jj, dot(store.row(ii), store.row(jj)));
        }
    }
}

#[inline(always)]
fn tile_impl<const FUSED: bool>(
    store: &NormalizedRows,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    out: &mut [f32],
) {
    let width = cols.len();
    let len = store.chunks_per_row;
    let mut i = rows.start;
    while i < rows.end {
        let mr = (rows.end - i).min(MR);
        let mut j = cols.start;
        while j < cols.end {
            let nr = (cols.end - j).min(NR);
            if mr == MR && nr == NR {
                let a = [store.row(i), store.row(i + 1), store.row(i + 2), store.row(i + 3)];
                let b = [store.row(j), store.row(j + 1)];
                let mut acc = [[[0.0f64; LANES]; NR]; MR];
                for c in 0..len {
                    let b0 = b[0][c];
                    let b1 = b[1][c];
                    for r in 0..MR {
                        let x = a[r][c];
                        for l in 0..LANES {
                            acc[r][0][l] = madd::<FUSED>(acc[r][0][l], x[l], b0[l]);
                            acc[r][1][l] = madd::<FUSED>(acc[r][1][l], x[l], b1[l]);
                        }
                    }
                }
                for r in 0..MR {
                    for q in 0..NR {
                        out[(i - rows.start + r) * width + (j - cols.start + q)] =
                            to_similarity(fold(acc[r][q]));
                    }
                }
            } else {
                for r in 0..mr {
                    for q in 0..nr {
                        let (x, y) = (store.row(i + r), store.row(j + q));
                        let mut acc = [0.0; LANES];
                        for c in 0..len {
                            for l in 0..LANES {
                                acc[l] = madd::<FUSED>(acc[l], x[c][l], y[c][l]);
                            }
                        }
                        out[(i - rows.start + r) * width + (j - cols.start + q)] =
                            to_similarity(fold(acc));
                    }
                }
            }
            j += nr;
        }
        i += mr;
    }
}
