//! Seeded random streams. Every consumer draws from its own ChaCha stream so that
//! adding draws in one place never shifts the values seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

pub type Stream = ChaCha8Rng;

/// Stream ids used by the trainers and estimators.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const LATENT: u64 = 3;
    pub const PROBES: u64 = 4;
    pub const DIRECTIONS: u64 = 5;
    pub const METRICS: u64 = 6;
    pub const ORACLE: u64 = 7;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent per-sample stream, for Monte-Carlo loops that may run in any order.
pub fn sample_stream(seed: u64, id: u64, index: u64) -> Stream {
    let mut rng = stream(seed, id);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

pub fn rademacher(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}
