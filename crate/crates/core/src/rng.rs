//! Seeded random streams.
//!
//! Every stochastic routine takes a 64-bit seed. Independent work items
//! (Monte-Carlo draws, permutations, random controls) get their own
//! substream keyed by `(seed, index)` so results do not depend on the order
//! or the thread in which items are evaluated.
//!
//! Substream seeds are produced by the SplitMix64 finalizer
//! (increment `0x9E3779B97F4A7C15`, multipliers `0xBF58476D1CE4E5B9` and
//! `0x94D049BB133111EB`, shifts 30/27/31). The stream itself is ChaCha8,
//! a counter-based generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `index` under `seed`.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_mul(GOLDEN_GAMMA)))
}

/// Root stream for a seed.
pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed))
}

/// Independent substream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(seed, index))
}

pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
