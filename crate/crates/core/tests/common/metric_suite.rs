//! F1 worked examples and the micro-F1 / accuracy identity.

use actissl_core::eval::{f1_scores, per_class_f1};
use actissl_core::rng::rng_from;
use rand::Rng;

use super::{ensure, Outcome};

/// Prediction/label vectors realizing `confusion[label][prediction]` counts.
pub fn from_confusion(confusion: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut p = Vec::new();
    let mut l = Vec::new();
    for (label, row) in confusion.iter().enumerate() {
        for (pred, &count) in row.iter().enumerate() {
            p.extend(std::iter::repeat_n(pred, count));
            l.extend(std::iter::repeat_n(label, count));
        }
    }
    (p, l)
}

pub fn worked_examples() -> Result<(), String> {
    let labels = [0, 1, 2, 1, 0, 2];
    let perfect = f1_scores(&labels, &labels, 3);
    ensure(perfect == (1.0, 1.0), || {
        format!("perfect predictions: {perfect:?}")
    })?;

    // TP=40 FP=10 FN=10 TN=40 for class 1
    let (p, l) = from_confusion(&[vec![40, 10], vec![10, 40]]);
    let s = f1_scores(&p, &l, 2);
    ensure(s == (0.8, 0.8), || format!("40/10/10/40: {s:?}"))?;

    let (p, l) = from_confusion(&[vec![90, 0], vec![10, 0]]);
    let s = f1_scores(&p, &l, 2);
    let majority = 2.0 * 90.0 / (2.0 * 90.0 + 10.0);
    ensure(s.1 == 0.9 && s.0 == majority / 2.0, || {
        format!("all-majority 90/10: {s:?}")
    })?;
    ensure((s.0 - 0.474).abs() < 5e-4, || {
        format!("all-majority macro {}", s.0)
    })
}

/// `n` random confusion matrices: micro F1 equals trace / total and macro
/// lies between the extreme per-class scores.
pub fn identities(n: usize) -> Result<(), String> {
    let mut rng = rng_from(0xf1);
    for case in 0..n {
        let k = rng.random_range(2..=3);
        let confusion: Vec<Vec<usize>> = (0..k)
            .map(|_| (0..k).map(|_| rng.random_range(0..30)).collect())
            .collect();
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            continue;
        }
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        let (p, l) = from_confusion(&confusion);
        let (macro_, micro) = f1_scores(&p, &l, k);
        let accuracy = trace as f64 / total as f64;
        ensure((micro - accuracy).abs() <= 1e-15, || {
            format!("case {case}: micro {micro} vs accuracy {accuracy} for {confusion:?}")
        })?;
        let per = per_class_f1(&p, &l, k);
        let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ensure(lo - 1e-15 <= macro_ && macro_ <= hi + 1e-15, || {
            format!("case {case}: macro {macro_} outside [{lo}, {hi}]")
        })?;
    }
    Ok(())
}

pub fn suite() -> Outcome {
    worked_examples()?;
    identities(1000)?;
    Ok("worked examples exact; micro = accuracy on 1000 confusion matrices".into())
}
