//! Seeded random streams.
//!
//! Every stochastic routine draws from a ChaCha8 generator keyed by a 64-bit
//! seed, with the ChaCha stream id selecting an independent substream. ChaCha
//! output is specified bit-for-bit, so a `(seed, stream)` pair yields the same
//! sequence on every platform. Gaussian variates use the ziggurat sampler of
//! `rand_distr::StandardNormal`, which is table driven.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a pair of indices, e.g. (task, restart).
pub fn stream_id(major: u64, minor: u64) -> u64 {
    // splitmix64 finalizer over the packed pair
    let mut z = major.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ minor;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
