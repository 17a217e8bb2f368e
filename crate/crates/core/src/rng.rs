//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the
//! run seed and a fixed purpose tag, so adding a new consumer never shifts
//! the draws of an existing one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform random permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> alloc::vec::Vec<usize> {
    let mut p: alloc::vec::Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Purpose tags for [`stream`].
pub mod tags {
    pub const SCHEMA: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const MASK: u64 = 3;
    pub const INIT: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const COUNTERFACTUAL: u64 = 6;
    pub const CORPUS: u64 = 7;
    pub const KMEANS: u64 = 8;
    pub const BOOTSTRAP: u64 = 9;
    pub const BATCHES: u64 = 10;
    pub const EMBED_MASK: u64 = 11;
    pub const RANDOM_DICT: u64 = 12;
}
