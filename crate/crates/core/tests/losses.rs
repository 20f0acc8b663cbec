mod common;

use actissl_core::byol::{byol_loss, byol_loss_batch};
use actissl_core::rng::rng_from;
use actissl_core::simclr::{nt_xent, ContrastiveBatch};
use actissl_core::Tensor;
use common::oracles::{byol_oracle, nt_xent_oracle};
use common::uniform;
use proptest::prelude::*;

#[test]
fn nt_xent_matches_double_loop_oracle() {
    let worst = common::oracles::nt_xent_grid(6).unwrap();
    assert!(worst <= common::oracles::NT_XENT_TOLERANCE);
}

#[test]
fn byol_matches_elementwise_oracle() {
    assert!(common::oracles::byol_random(500).unwrap() <= common::oracles::BYOL_TOLERANCE);
}

#[test]
fn closed_form_cases() {
    let (identical, orthogonal) = common::oracles::closed_forms().unwrap();
    assert!((identical - 3f64.ln()).abs() < 1e-12);
    assert!((orthogonal - 0.2395).abs() < 1e-4);
}

#[test]
fn byol_antipodal_case() {
    let e = [1.0, 0.0];
    let m = [-1.0, 0.0];
    assert!((byol_loss(&e, &m, &e, &m).unwrap() - 4.0).abs() < 1e-15);
    assert!(byol_loss(&e, &[0.0, 0.0], &e, &m).is_err());
}

#[test]
fn aligned_orthogonal_pairs_minimize_among_candidates() {
    // N = 2 in 4 dimensions: each z equal to its partner and orthogonal to
    // the other pair beats every other configuration in the candidate set.
    let e = |i: usize| {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        v
    };
    let optimum = vec![e(0), e(1), e(0), e(1)];
    let mut rng = rng_from(3);
    let mut candidates = vec![
        vec![e(0), e(0), e(0), e(0)],
        vec![e(0), e(1), e(1), e(0)],
        vec![e(0), e(1), e(2), e(3)],
        vec![e(0), e(1), e(0), e(2)],
    ];
    candidates.extend((0..20).map(|_| (0..4).map(|_| uniform(&mut rng, 4, -1.0, 1.0)).collect()));
    let loss = |z: &Vec<Vec<f64>>| {
        nt_xent(
            &ContrastiveBatch::new(Tensor::from_rows(z).unwrap(), vec![2, 3, 0, 1]).unwrap(),
            0.5,
        )
        .unwrap()
    };
    let best = loss(&optimum);
    for c in &candidates {
        assert!(loss(c) > best, "{c:?} scored {} <= {best}", loss(c));
    }
}

#[test]
fn nt_xent_rejects_degenerate_batches() {
    let first = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let second = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.5, 0.1]]).unwrap();
    let zero_norm = ContrastiveBatch::from_views(&first, &second).unwrap();
    assert!(nt_xent(&zero_norm, 0.5).is_err());
    let z = Tensor::concat_rows(&first, &second).unwrap();
    assert!(ContrastiveBatch::new(z, vec![1, 0, 3, 3]).is_err());
    assert!(ContrastiveBatch::new(Tensor::zeros(&[2, 3]), vec![1, 0]).is_err());
}

fn matrix(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-3.0..-0.1f64, 0.1..3.0f64], n * d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nt_xent_properties(n in 2usize..6, d in 2usize..6, seed in any::<u64>(), scale in 0.01..100.0f64) {
        let mut rng = rng_from(seed);
        let a = Tensor::new(vec![n, d], uniform(&mut rng, n * d, -1.0, 1.0)).unwrap();
        let b = Tensor::new(vec![n, d], uniform(&mut rng, n * d, -1.0, 1.0)).unwrap();
        for tau in [0.1, 0.5, 1.0] {
            let base = nt_xent(&ContrastiveBatch::from_views(&a, &b).unwrap(), tau).unwrap();
            prop_assert!(base >= 0.0);
            // swapping the views of every pair
            let swapped = nt_xent(&ContrastiveBatch::from_views(&b, &a).unwrap(), tau).unwrap();
            prop_assert!((base - swapped).abs() < 1e-12);
            // a common positive rescaling
            let scaled = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * scale).collect()).unwrap();
            let rescaled = nt_xent(&ContrastiveBatch::from_views(&scaled(&a), &scaled(&b)).unwrap(), tau).unwrap();
            prop_assert!((base - rescaled).abs() < 1e-10);
            // reordering the pairs
            let order: Vec<usize> = (0..n).rev().collect();
            let reordered = nt_xent(&ContrastiveBatch::from_views(&a.select_rows(&order), &b.select_rows(&order)).unwrap(), tau).unwrap();
            prop_assert!((base - reordered).abs() < 1e-12);
            // continuity in tau, against the oracle
            let z: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).chain((0..n).map(|i| b.row(i).to_vec())).collect();
            let partner: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
            let near = nt_xent(&ContrastiveBatch::from_views(&a, &b).unwrap(), tau * (1.0 + 1e-7)).unwrap();
            prop_assert!((near - base).abs() < 1e-4);
            prop_assert!((nt_xent_oracle(&z, &partner, tau) - base).abs() < 1e-10);
        }
    }

    #[test]
    fn byol_properties(d in 1usize..16, v in matrix(4, 16)) {
        let r = |i: usize| &v[i * 16..i * 16 + d];
        let loss = byol_loss(r(0), r(1), r(2), r(3)).unwrap();
        // swapping v and v'
        prop_assert!((loss - byol_loss(r(2), r(3), r(0), r(1)).unwrap()).abs() < 1e-15);
        prop_assert!((loss - byol_oracle(r(0), r(1), r(2), r(3))).abs() < 1e-12);
        prop_assert!((0.0..=8.0 + 1e-12).contains(&loss));
        prop_assert!(byol_loss(r(0), r(1), r(0), r(1)).unwrap() / 2.0 <= 4.0 + 1e-12);
        prop_assert!(byol_loss(r(0), r(0), r(0), r(0)).unwrap() < 1e-15);
        // batch form with B = 1 equals the single-sample loss
        let p = Tensor::from_rows(&[r(0).to_vec(), r(2).to_vec()]).unwrap();
        let t = Tensor::from_rows(&[r(3).to_vec(), r(1).to_vec()]).unwrap();
        prop_assert!((byol_loss_batch(&p, &t, true).unwrap().0 - loss).abs() < 1e-12);
    }
}
