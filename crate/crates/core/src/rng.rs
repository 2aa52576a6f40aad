//! Seeded random streams. Every stochastic quantity in training is drawn
//! from a stream keyed by `(seed, purpose, index)`, so a run can be resumed
//! from its step counter alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Stream purposes; kept disjoint so draws for one role never alias another.
pub const PURPOSE_INIT: u64 = 1;
pub const PURPOSE_EPOCH: u64 = 2;
pub const PURPOSE_STEP: u64 = 3;
pub const PURPOSE_EVAL: u64 = 4;
pub const PURPOSE_POSITIVE: u64 = 5;

pub fn stream(seed: u64, purpose: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) ^ index);
    rng
}

/// Uniform draw strictly inside (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Fisher–Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
