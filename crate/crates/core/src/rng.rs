//! Seeded, splittable randomness.
//!
//! A run seed is split into independent ChaCha8 streams in a fixed order:
//! upper-level sampling, lower-level sampling, then the private streams of
//! the x, y and z channel estimators (Bernoulli coins). Changing what one
//! stream consumes never perturbs another.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream identifiers, in split order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    UpperSampling = 0,
    LowerSampling = 1,
    ChannelX = 2,
    ChannelY = 3,
    ChannelZ = 4,
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, which as u64 + 1))
}

/// Uniform draw of `size` distinct indices from `0..bound`.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    rng: &mut R,
    bound: usize,
    size: usize,
) -> Vec<usize> {
    if size >= bound {
        return (0..bound).collect();
    }
    index::sample(rng, bound, size).into_vec()
}

/// Bernoulli(p) coin.
pub fn coin<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}
