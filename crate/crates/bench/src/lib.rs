//! Shared fixtures for the criterion benchmarks.

use falnet_core::tensor::Matrix;

/// Deterministic pseudo-random series in `[-1, 1)` (xorshift, no RNG crate needed).
pub fn series(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

pub fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::from_vec_unchecked(rows, cols, series(rows * cols, seed))
}
