mod common;

use std::collections::{BTreeMap, BTreeSet};

use actissl_core::data::{
    generate_synthetic, parse_actigraphy_csv, preprocess, read_windows_from, sample_labels,
    write_actigraphy_csv, write_labels_csv, write_windows_to, ClassEffects, Labels,
    PreprocessConfig, Split, SyntheticConfig, Task, Window, WINDOW_LENGTH,
};
use actissl_core::eval::{extract_embeddings, probe_all, ProbeConfig};
use actissl_core::nn::Mode;
use actissl_core::rng::rng_from;
use actissl_core::simclr::{SimclrArchitecture, SimclrModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn class_counts(labels: &[Labels], task: Task) -> Vec<usize> {
    let mut counts = vec![0; task.n_classes()];
    for l in labels {
        counts[l.get(task)] += 1;
    }
    counts
}

#[test]
fn marginals_within_binomial_band_at_1887() {
    let config = SyntheticConfig {
        n_participants: 1887,
        seed: 3,
        ..Default::default()
    };
    let labels = sample_labels(&config).unwrap();
    let n = labels.len() as f64;
    for task in Task::ALL {
        for (c, &count) in class_counts(&labels, task).iter().enumerate() {
            let p = config.prevalence.get(task)[c];
            let band = 3.0 * (n * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - n * p).abs() <= band,
                "{task:?} class {c}: {count} vs {:.1} +- {band:.1}",
                n * p
            );
        }
    }
    // 8.25% sleep apnea over 1887 participants
    assert!((0.0825 * n - 155.7).abs() < 0.1);
}

#[test]
fn marginals_converge_at_5000() {
    let config = SyntheticConfig {
        n_participants: 5000,
        seed: 11,
        ..Default::default()
    };
    let labels = sample_labels(&config).unwrap();
    for task in Task::ALL {
        for (c, &count) in class_counts(&labels, task).iter().enumerate() {
            let p = config.prevalence.get(task)[c];
            let observed = count as f64 / 5000.0;
            assert!(
                (observed - p).abs() <= 0.02,
                "{task:?} class {c}: {observed} vs {p}"
            );
        }
    }
}

fn no_shared_participants(windows: &[Window]) -> bool {
    let mut by_split: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    for w in windows {
        by_split
            .entry(w.split)
            .or_default()
            .insert(&w.participant_id);
    }
    let sets: Vec<_> = by_split.values().collect();
    sets.iter()
        .enumerate()
        .all(|(i, a)| sets[i + 1..].iter().all(|b| a.is_disjoint(b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn windows_conserve_samples_and_never_leak(
        n in 3usize..30,
        days in 0.05..0.8f64,
        seed in any::<u64>(),
        split_seed in any::<u64>(),
    ) {
        let records = generate_synthetic(&SyntheticConfig {
            n_participants: n,
            days,
            seed,
            ..Default::default()
        }).unwrap();
        let config = PreprocessConfig { seed: split_seed, ..Default::default() };
        let out = match preprocess(&records, &config) {
            Ok(out) => out,
            // every participant too short
            Err(_) => {
                prop_assert!(records.iter().all(|r| r.len() < WINDOW_LENGTH));
                return Ok(());
            }
        };
        prop_assert!(no_shared_participants(&out.windows));
        let expected: usize = out.report.usable_samples.iter().map(|(_, s)| s / WINDOW_LENGTH).sum();
        prop_assert_eq!(out.windows.len(), expected);
        prop_assert!(out.windows.iter().all(|w| w.length() == WINDOW_LENGTH && w.values.iter().all(|v| v.is_finite())));
        for w in &out.windows {
            let record = records.iter().find(|r| r.participant_id == w.participant_id).unwrap();
            prop_assert_eq!(w.labels, record.labels);
        }
    }
}

#[test]
fn normalization_ignores_held_out_participants() {
    let records = generate_synthetic(&SyntheticConfig {
        n_participants: 20,
        days: 0.5,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let config = PreprocessConfig::default();
    let base = preprocess(&records, &config).unwrap();
    let held_out: BTreeSet<String> = base
        .windows
        .iter()
        .filter(|w| w.split != Split::Train)
        .map(|w| w.participant_id.clone())
        .collect();
    let mut changed = records.clone();
    for r in changed
        .iter_mut()
        .filter(|r| held_out.contains(&r.participant_id))
    {
        r.channels[0]
            .iter_mut()
            .for_each(|v| *v = *v * 10.0 + 1000.0);
    }
    let other = preprocess(&changed, &config).unwrap();
    assert_eq!(base.normalization, other.normalization);
    let train = |p: &actissl_core::data::Preprocessed| -> Vec<Window> {
        p.split(Split::Train).cloned().collect()
    };
    assert_eq!(train(&base), train(&other));
}

#[test]
fn csv_and_container_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let records = generate_synthetic(&SyntheticConfig {
        n_participants: 6,
        days: 0.4,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let (acti, labels) = (dir.path().join("a.csv"), dir.path().join("l.csv"));
    write_actigraphy_csv(&records, &acti).unwrap();
    write_labels_csv(&records, &labels).unwrap();
    let parsed = parse_actigraphy_csv(&acti, &labels).unwrap();
    assert_eq!(parsed.records, records);
    assert_eq!(parsed.missing_cells, 0);

    let pre = preprocess(&parsed.records, &PreprocessConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_windows_to(&mut buf, &pre.windows, &pre.normalization).unwrap();
    let (windows, norm) = read_windows_from(buf.as_slice()).unwrap();
    assert_eq!(windows, pre.windows);
    assert_eq!(norm, pre.normalization);
}

#[test]
fn zero_noise_twins_have_identical_traces() {
    let config = SyntheticConfig {
        n_participants: 1,
        days: 0.3,
        noise: 0.0,
        trait_spread: 0.0,
        seed: 4,
        ..Default::default()
    };
    let labels = Labels([1, 2, 0, 1, 0]);
    let a = actissl_core::data::synthesize_participant("A".into(), labels, &config, 99);
    let b = actissl_core::data::synthesize_participant("B".into(), labels, &config, 99);
    assert_eq!(a.channels, b.channels);
}

/// With every class effect at zero, probe scores on the real labels sit
/// inside the spread obtained by permuting labels across participants.
#[test]
fn zero_effects_match_the_permutation_null() {
    let records = generate_synthetic(&SyntheticConfig {
        n_participants: 200,
        days: 0.2,
        effects: ClassEffects::none(),
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let windows = preprocess(&records, &PreprocessConfig::default())
        .unwrap()
        .windows;
    let mut model = SimclrModel::new(&SimclrArchitecture::default(), 0).unwrap();
    model.set_mode(Mode::Inference);
    let set = extract_embeddings(&model.encoder, &windows, 64).unwrap();
    let config = ProbeConfig::default();
    let real = probe_all(&set, &Task::ALL, &config, 0).unwrap();

    let mut null: Vec<Vec<f64>> = vec![Vec::new(); Task::ALL.len()];
    for perm in 0..10 {
        let mut shuffled = set.clone();
        shuffled.labels.shuffle(&mut rng_from(1000 + perm));
        for (t, (_, s)) in probe_all(&shuffled, &Task::ALL, &config, 0)
            .unwrap()
            .iter()
            .enumerate()
        {
            null[t].push(s.f1_macro);
        }
    }
    for (t, (task, score)) in real.iter().enumerate() {
        let n = null[t].len() as f64;
        let mean = null[t].iter().sum::<f64>() / n;
        let sd = (null[t].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(
            (score.f1_macro - mean).abs() <= 3.0 * sd.max(0.01),
            "{task:?}: {} vs null {mean:.3} +- {sd:.3}",
            score.f1_macro
        );
    }
}
