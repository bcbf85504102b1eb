//! Seeded RNG plumbing.
//!
//! Every stochastic operation in this crate takes either an explicit RNG or a
//! `u64` seed. Replications and chains derive disjoint substreams from a base
//! seed with a counter, so parallel runs are reproducible and independent of
//! scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha8 is fast, has solid statistical
/// quality, and its output stream is stable across platforms.
pub type Rng = ChaCha8Rng;

/// Counter-based substream seed derivation using SplitMix64.
///
/// Feeding `(base_seed, counter)` pairs through a full-avalanche mixer gives
/// well-separated seeds for any counter pattern, including consecutive
/// replication indices.
#[inline]
pub fn substream_seed(base_seed: u64, counter: u64) -> u64 {
    let mut z = base_seed.wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG seeded for one substream of `base_seed`.
pub fn substream_rng(base_seed: u64, counter: u64) -> Rng {
    Rng::seed_from_u64(substream_seed(base_seed, counter))
}
