//! Seeded randomness. Every stochastic step takes an explicit seed so runs are
//! reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::DenseMatrix;

pub type StageRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-uniform initialization: `U[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut StageRng) -> DenseMatrix {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-r..=r))
}

/// Inverted-dropout mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut StageRng) -> DenseMatrix {
    let keep = 1.0 - rate;
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}
