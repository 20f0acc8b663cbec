//! Fixtures shared by the benchmarks.

use actissl_core::data::{Labels, Split, Window};
use actissl_core::rng::rng_from;
use actissl_core::Tensor;
use rand::Rng;

/// `n` standardized-looking windows of `channels × length` uniform noise.
pub fn random_windows(n: usize, channels: usize, length: usize, seed: u64) -> Vec<Window> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|i| {
            let values = (0..channels * length)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            Window::new(
                format!("B{i:04}"),
                channels,
                values,
                Labels::default(),
                Split::Train,
            )
            .expect("valid shape")
        })
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("valid shape")
}
