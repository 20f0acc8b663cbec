//! Central finite-difference checks for every layer kind and both losses.

use std::time::Instant;

use actissl_core::byol::byol_loss_batch;
use actissl_core::nn::{LayerSpec, Mode, Network};
use actissl_core::rng::{rng_from, RunRng};
use actissl_core::simclr::{nt_xent, nt_xent_with_grad, ContrastiveBatch};
use actissl_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{random_tensor, uniform, Outcome};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const CASES: usize = 50;

/// `max |a - n| / max(|a|, |n|)` over a whole tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

/// Gradient of `f` at `x` by central differences.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + EPS;
            let up = f(&probe);
            probe[i] = x[i] - EPS;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks input and parameter gradients of a one-layer network under the
/// scalar loss `sum(r * output)`; returns the worst relative error.
fn check_layer(spec: LayerSpec, x: Tensor, seed: u64) -> Result<f64, String> {
    let mut rng = rng_from(seed);
    let mut net = Network::new(std::slice::from_ref(&spec), &mut rng).map_err(|e| e.to_string())?;
    net.set_mode(Mode::Training);
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let mask_seed = seed ^ 0x5eed;
    let out = net
        .forward(&x, &mut rng_from(mask_seed))
        .map_err(|e| e.to_string())?;
    let r = random_tensor(&mut rng, out.shape());
    net.zero_grad();
    net.clear_caches();
    net.forward(&x, &mut rng_from(mask_seed)).unwrap();
    let dx = net.backward(&r).map_err(|e| e.to_string())?;
    let grads: Vec<Tensor> = net.params().map(|p| p.grad.clone()).collect();

    let loss = |net: &mut Network, x: &Tensor| {
        let out = net.forward(x, &mut rng_from(mask_seed)).unwrap();
        net.clear_caches();
        dot(&out, &r)
    };
    let mut worst = 0.0f64;
    let numeric = numeric_gradient(x.data(), |v| {
        loss(
            &mut net.clone(),
            &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap(),
        )
    });
    worst = worst.max(relative_error(dx.data(), &numeric));
    for (k, g) in grads.iter().enumerate() {
        let values = net.params().nth(k).unwrap().value.data().to_vec();
        let numeric = numeric_gradient(&values, |v| {
            let mut probe = net.clone();
            probe
                .params_mut()
                .nth(k)
                .unwrap()
                .value
                .data_mut()
                .copy_from_slice(v);
            loss(&mut probe, &x)
        });
        worst = worst.max(relative_error(g.data(), &numeric));
    }
    Ok(worst)
}

fn away_from_zero(rng: &mut RunRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Values whose per-row maximum is separated from the runner-up by far more
/// than the finite-difference step.
fn distinct_rows(rng: &mut RunRng, rows: usize, length: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * length);
    for _ in 0..rows {
        let mut ranks: Vec<usize> = (0..length).collect();
        ranks.shuffle(rng);
        out.extend(
            ranks
                .iter()
                .map(|&k| k as f64 * 0.05 - 0.5 + rng.random_range(0.0..0.01)),
        );
    }
    out
}

fn layer_case(op: &str, rng: &mut RunRng) -> (LayerSpec, Tensor) {
    match op {
        "conv1d" => {
            let (b, i, o) = (
                rng.random_range(1..=3),
                rng.random_range(1..=4),
                rng.random_range(1..=4),
            );
            let kernel = rng.random_range(1..=6);
            let stride = rng.random_range(1..=3);
            let length = kernel + rng.random_range(0..=12);
            (
                LayerSpec::Conv1d {
                    in_channels: i,
                    out_channels: o,
                    kernel,
                    stride,
                },
                random_tensor(rng, &[b, i, length]),
            )
        }
        "dense" => {
            let (b, i, o) = (
                rng.random_range(1..=4),
                rng.random_range(1..=6),
                rng.random_range(1..=6),
            );
            (
                LayerSpec::Dense {
                    inputs: i,
                    outputs: o,
                },
                random_tensor(rng, &[b, i]),
            )
        }
        "batchnorm1d" => {
            let (b, f) = (rng.random_range(2..=6), rng.random_range(1..=5));
            (
                LayerSpec::BatchNorm1d { features: f },
                random_tensor(rng, &[b, f]),
            )
        }
        "dropout" => {
            let (b, f) = (rng.random_range(1..=4), rng.random_range(1..=8));
            let rate = rng.random_range(0.1..0.5);
            (LayerSpec::Dropout { rate }, random_tensor(rng, &[b, f]))
        }
        "relu" => {
            let shape = [
                rng.random_range(1..=3),
                rng.random_range(1..=3),
                rng.random_range(1..=6),
            ];
            let n = shape.iter().product();
            (
                LayerSpec::Relu,
                Tensor::new(shape.to_vec(), away_from_zero(rng, n)).unwrap(),
            )
        }
        "sigmoid" => {
            let (b, f) = (rng.random_range(1..=4), rng.random_range(1..=6));
            (
                LayerSpec::Sigmoid,
                Tensor::new(vec![b, f], uniform(rng, b * f, -3.0, 3.0)).unwrap(),
            )
        }
        "global_max_pool" => {
            let (b, c, l) = (
                rng.random_range(1..=3),
                rng.random_range(1..=4),
                rng.random_range(1..=10),
            );
            (
                LayerSpec::GlobalMaxPool,
                Tensor::new(vec![b, c, l], distinct_rows(rng, b * c, l)).unwrap(),
            )
        }
        _ => unreachable!("unknown op {op}"),
    }
}

pub const LAYER_OPS: [&str; 7] = [
    "conv1d",
    "dense",
    "batchnorm1d",
    "dropout",
    "relu",
    "sigmoid",
    "global_max_pool",
];

pub fn layer_worst(op: &str, cases: usize) -> Result<f64, String> {
    let mut rng = rng_from(0x6ad + op.len() as u64);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (spec, x) = layer_case(op, &mut rng);
        let err = check_layer(spec.clone(), x, 1000 + case as u64)?;
        if !(err <= TOLERANCE) {
            return Err(format!(
                "{op} case {case} ({spec:?}): relative error {err:.3e}"
            ));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn nt_xent_worst(cases: usize) -> Result<f64, String> {
    let mut rng = rng_from(0x47);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let tau = [0.1, 0.5, 1.0][case % 3];
        let z = random_tensor(&mut rng, &[2 * n, d]);
        let partner: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
        let batch = ContrastiveBatch::new(z.clone(), partner.clone()).unwrap();
        let (_, grad) = nt_xent_with_grad(&batch, tau).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(z.data(), |v| {
            let z = Tensor::new(z.shape().to_vec(), v.to_vec()).unwrap();
            nt_xent(&ContrastiveBatch::new(z, partner.clone()).unwrap(), tau).unwrap()
        });
        let err = relative_error(grad.data(), &numeric);
        if !(err <= TOLERANCE) {
            return Err(format!(
                "nt_xent case {case} (N={n}, d={d}, tau={tau}): {err:.3e}"
            ));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn byol_worst(cases: usize, normalize: bool) -> Result<f64, String> {
    let mut rng = rng_from(0xb7 + normalize as u64);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let b = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let p = random_tensor(&mut rng, &[2 * b, d]);
        let t = random_tensor(&mut rng, &[2 * b, d]);
        let (_, grad) = byol_loss_batch(&p, &t, normalize).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(p.data(), |v| {
            let p = Tensor::new(p.shape().to_vec(), v.to_vec()).unwrap();
            byol_loss_batch(&p, &t, normalize).unwrap().0
        });
        let err = relative_error(grad.data(), &numeric);
        if !(err <= TOLERANCE) {
            return Err(format!(
                "byol_loss (normalize={normalize}) case {case}: {err:.3e}"
            ));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Every layer kind and both losses, `CASES` randomized instances each.
pub fn suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut ops = 0;
    for op in LAYER_OPS {
        worst = worst.max(layer_worst(op, CASES)?);
        ops += 1;
    }
    worst = worst.max(nt_xent_worst(CASES)?);
    worst = worst.max(byol_worst(CASES, true)?);
    worst = worst.max(byol_worst(CASES, false)?);
    ops += 3;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("suite took {secs:.1}s (limit 30s)"));
    }
    Ok(format!(
        "{ops} ops x {CASES} cases, worst relative error {worst:.2e} (limit {TOLERANCE:.0e}), {secs:.2}s"
    ))
}
