//! Deterministic random streams.
//!
//! Every stochastic routine in this crate derives one independent stream per
//! logical unit of work (sample path, multi-start, condition-check sample)
//! from a master seed and the unit's index. Streams are counter-derived, not
//! sequentially split, so any scheduling of the units reproduces the same
//! draws; this is what makes Monte Carlo results independent of the worker
//! count.
//!
//! The generator is pinned to ChaCha12 by name rather than to `StdRng`, whose
//! algorithm is allowed to change between `rand` releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; bijective on `u64`.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` from a master seed.
///
/// Mixing is two SplitMix64 rounds over the pair, which decorrelates
/// neighbouring indices and neighbouring master seeds alike.
#[inline]
pub fn derive_stream_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// A ready generator for the given stream.
#[inline]
pub fn stream_rng(master: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_stream_seed(master, index))
}
