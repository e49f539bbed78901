//! Seeded random streams.
//!
//! Every run derives independent ChaCha8 streams from one 64-bit seed, so
//! drawing from one purpose (say, target-batch sampling) never shifts the
//! values seen by another (source-batch sampling, instance noise).

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::{Grid4, Shape};

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 0;
pub const STREAM_SOURCE_BATCHES: u64 = 1;
pub const STREAM_TARGET_BATCHES: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_EVAL: u64 = 4;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn uniform_grid(rng: &mut Rng, shape: Shape, lo: f64, hi: f64) -> Grid4 {
    let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Grid4::from_vec(shape, data).expect("length matches shape")
}

pub fn normal_grid(rng: &mut Rng, shape: Shape, mean: f64, std: f64) -> Grid4 {
    let normal = Normal::new(mean, std).expect("finite, non-negative std");
    let data = (0..shape.len()).map(|_| normal.sample(rng)).collect();
    Grid4::from_vec(shape, data).expect("length matches shape")
}
