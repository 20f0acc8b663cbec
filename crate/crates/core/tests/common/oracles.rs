//! Literal reference implementations of both losses, written from their
//! definitions with plain loops.

use actissl_core::byol::{byol_loss, byol_loss_batch};
use actissl_core::rng::rng_from;
use actissl_core::simclr::{nt_xent, ContrastiveBatch};
use actissl_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{ensure, uniform, Outcome};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// `-log(exp(sim(i, j) / tau) / sum_{k != i} exp(sim(i, k) / tau))`, averaged
/// over every anchor `i` with `j` its partner.
pub fn nt_xent_oracle(z: &[Vec<f64>], partner: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (cosine(&z[i], &z[k]) / tau).exp();
            }
        }
        let numer = (cosine(&z[i], &z[partner[i]]) / tau).exp();
        total += -(numer / denom).ln();
    }
    total / n as f64
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut sq = 0.0;
    for x in v {
        sq += x * x;
    }
    let norm = sq.sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s / a.len() as f64
}

/// Sum of the two cross-view mean squared errors between unit vectors.
pub fn byol_oracle(p_v: &[f64], t_vp: &[f64], p_vp: &[f64], t_v: &[f64]) -> f64 {
    mse(&unit(p_v), &unit(t_vp)) + mse(&unit(p_vp), &unit(t_v))
}

pub const NT_XENT_TOLERANCE: f64 = 1e-10;
pub const BYOL_TOLERANCE: f64 = 1e-12;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.dim(0)).map(|i| t.row(i).to_vec()).collect()
}

/// Random perfect matching on `2n` points without fixed points.
fn random_matching(n: usize, rng: &mut actissl_core::rng::RunRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..2 * n).collect();
    idx.shuffle(rng);
    let mut partner = vec![0; 2 * n];
    for pair in idx.chunks(2) {
        partner[pair[0]] = pair[1];
        partner[pair[1]] = pair[0];
    }
    partner
}

pub fn nt_xent_grid(batches_per_cell: usize) -> Result<f64, String> {
    let mut rng = rng_from(0x0c1e);
    let mut worst = 0.0f64;
    for n in 2..=8 {
        for tau in [0.1, 0.5, 1.0] {
            for b in 0..batches_per_cell {
                let d = rng.random_range(2..=16);
                let z =
                    Tensor::new(vec![2 * n, d], uniform(&mut rng, 2 * n * d, -2.0, 2.0)).unwrap();
                let partner = if b % 2 == 0 {
                    (0..2 * n).map(|i| (i + n) % (2 * n)).collect()
                } else {
                    random_matching(n, &mut rng)
                };
                let expected = nt_xent_oracle(&rows(&z), &partner, tau);
                let got = nt_xent(&ContrastiveBatch::new(z, partner).unwrap(), tau).unwrap();
                let err = (got - expected).abs();
                ensure(err <= NT_XENT_TOLERANCE, || {
                    format!("nt_xent N={n} tau={tau}: {got} vs oracle {expected}")
                })?;
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

pub fn byol_random(cases: usize) -> Result<f64, String> {
    let mut rng = rng_from(0xb0);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = rng.random_range(1..=64);
        let v: Vec<Vec<f64>> = (0..4).map(|_| uniform(&mut rng, d, -2.0, 2.0)).collect();
        let expected = byol_oracle(&v[0], &v[1], &v[2], &v[3]);
        let got = byol_loss(&v[0], &v[1], &v[2], &v[3]).unwrap();
        worst = worst.max((got - expected).abs());

        // batched form: rows [v; v'] pair row i with row i + B
        let b = rng.random_range(1..=5);
        let p = Tensor::new(vec![2 * b, d], uniform(&mut rng, 2 * b * d, -2.0, 2.0)).unwrap();
        let t = Tensor::new(vec![2 * b, d], uniform(&mut rng, 2 * b * d, -2.0, 2.0)).unwrap();
        let mut expected = 0.0;
        for i in 0..b {
            expected += byol_oracle(p.row(i), t.row(i + b), p.row(i + b), t.row(i));
        }
        expected /= b as f64;
        let (got, _) = byol_loss_batch(&p, &t, true).unwrap();
        worst = worst.max((got - expected).abs());
    }
    ensure(worst <= BYOL_TOLERANCE, || {
        format!("byol_loss deviates from the oracle by {worst:.3e}")
    })?;
    Ok(worst)
}

/// Identical projections give `log 3`; two orthogonal pairs at `tau = 0.5`
/// give `-log(e^2 / (e^2 + 2))`.
pub fn closed_forms() -> Result<(f64, f64), String> {
    let same = Tensor::from_rows(&vec![vec![0.3, -1.2, 2.0]; 2]).unwrap();
    let identical = nt_xent(&ContrastiveBatch::from_views(&same, &same).unwrap(), 0.7).unwrap();
    let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let orthogonal = nt_xent(&ContrastiveBatch::from_views(&e, &e).unwrap(), 0.5).unwrap();
    let round4 = |x: f64| (x * 1e4).round() / 1e4;
    ensure(round4(identical) == round4(3f64.ln()), || {
        format!("identical projections: {identical} vs log 3")
    })?;
    let e2 = 2f64.exp();
    let expected = -(e2 / (e2 + 2.0)).ln();
    ensure(
        round4(orthogonal) == 0.2395 && round4(expected) == 0.2395,
        || format!("orthogonal pairs: {orthogonal}"),
    )?;
    Ok((identical, orthogonal))
}

pub fn suite() -> Outcome {
    let nt = nt_xent_grid(6)?;
    let byol = byol_random(500)?;
    let (identical, orthogonal) = closed_forms()?;
    Ok(format!(
        "nt_xent max |err| {nt:.1e} over N 2..8 x tau {{0.1, 0.5, 1.0}}; byol max |err| {byol:.1e}; \
         closed forms {identical:.4} and {orthogonal:.4}"
    ))
}
