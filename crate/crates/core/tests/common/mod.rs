//! Checks shared by the per-topic test files and the acceptance runner.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

pub mod augment_suite;
pub mod byol_replay;
pub mod gradients;
pub mod metric_suite;
pub mod oracles;

use actissl_core::data::{Labels, Split, Window};
use actissl_core::rng::{rng_from, RunRng};
use actissl_core::Tensor;
use rand::Rng;

/// Result of one suite: `Err` carries the first failure.
pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn uniform(rng: &mut RunRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut RunRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n, -1.0, 1.0)).unwrap()
}

pub fn window(id: &str, channels: usize, values: Vec<f64>) -> Window {
    Window::new(id, channels, values, Labels([1, 0, 2, 1, 0]), Split::Train).unwrap()
}

pub fn random_window(seed: u64, channels: usize, length: usize) -> Window {
    let mut rng = rng_from(seed);
    window(
        &format!("W{seed}"),
        channels,
        uniform(&mut rng, channels * length, -3.0, 3.0),
    )
}
