//! Counter-based random streams.
//!
//! A stream is ChaCha8 keyed by the seed with the ChaCha stream id set to
//! `stream`; the 32-bit word position is the counter. `(seed, stream, index)`
//! therefore addresses one draw directly, and distinct stream ids never
//! overlap.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededStream = ChaCha8Rng;

pub fn seeded_rng(seed: u64, stream: u64) -> SeededStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The `index`-th 64-bit draw of a stream, without generating its prefix.
pub fn draw_u64(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = seeded_rng(seed, stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

// Stream ids used by the generators.
pub(crate) const STREAM_GROUP_DIRECTIONS: u64 = 1;
pub(crate) const STREAM_CENTERS: u64 = 2;
pub(crate) const STREAM_SPLIT: u64 = 3;
pub(crate) const STREAM_SHUFFLE: u64 = 4;
pub(crate) const STREAM_PAIRING: u64 = 5;
pub(crate) const STREAM_INIT: u64 = 6;
pub(crate) const STREAM_GRAD_CHECK: u64 = 7;
/// Per-image noise streams start here (`+ image index`).
pub(crate) const STREAM_NOISE_BASE: u64 = 1 << 32;
