//! Shared fixtures for the pipeline benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use openinc_core::tensor::Tensor;

/// Deterministic matrix with entries in (-1, 1).
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

/// Unit-row matrix for contrastive losses.
pub fn random_unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor {
    random_matrix(rows, cols, seed)
        .l2_normalize()
        .expect("random rows are nonzero")
}

/// Cycling labels 0..classes.
pub fn cycling_labels(rows: usize, classes: usize) -> Vec<usize> {
    (0..rows).map(|i| i % classes).collect()
}
