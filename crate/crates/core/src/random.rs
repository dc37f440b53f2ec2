//! Counter-based random streams.
//!
//! Every logical draw (sample index, grid point, noise vector) gets its own
//! ChaCha stream keyed by `(seed, stream)`, so results never depend on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::Signal;

/// Stream ids reserved for draws that are not indexed by a sample.
pub mod streams {
    pub const POWER_ITERATION: u64 = 1 << 40;
    pub const MASK: u64 = (1 << 40) + 1;
    pub const GROUND_TRUTH: u64 = (1 << 40) + 2;
    pub const MEASUREMENT_NOISE: u64 = (1 << 40) + 3;
    pub const AFFINE_INSTANCE: u64 = (1 << 40) + 4;
    /// First of a block of per-grid-point noise streams.
    pub const PER_GRID_NOISE: u64 = 1 << 41;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn standard_normal_signal(seed: u64, stream: u64, dim: usize) -> Signal {
    let mut rng = stream_rng(seed, stream);
    Signal::from_vec(standard_normal_vec(&mut rng, dim))
}
