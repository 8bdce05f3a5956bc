//! Seed derivation and the generator used everywhere randomness is needed.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed. Child seeds are
//! derived with [`mix_seed`], so a model index, epoch or sample index maps to
//! an independent stream regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `(parent, index)`.
///
/// `mix_seed(s, i) = splitmix64(s ^ splitmix64(i))`; used for per-model,
/// per-epoch and per-sample streams.
#[inline]
pub fn mix_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags for [`mix_seed`] so unrelated consumers never share a stream.
pub mod stream {
    pub const INIT: u64 = 0x1A17;
    pub const SHUFFLE: u64 = 0x5AFF;
    pub const ENHANCE: u64 = 0xE4A1;
    pub const TEACHER: u64 = 0x7EAC;
    pub const QUERY: u64 = 0x0E41;
}
