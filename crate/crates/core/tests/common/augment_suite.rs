//! Invariants and statistics of the augmentation module.

use actissl_core::augment::{
    augment, make_view_pair, permute_segments, time_warp_map, AugmentationSpec, Pipeline,
};
use actissl_core::data::Window;
use actissl_core::rng::rng_from;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ensure, random_window, window, Outcome};

pub const WINDOWS: usize = 1000;

fn single(spec: AugmentationSpec) -> Pipeline {
    Pipeline::new(vec![spec])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn channels_sorted(w: &Window) -> Vec<Vec<u64>> {
    let mut c: Vec<Vec<u64>> = (0..w.channels)
        .map(|i| w.channel(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    c.sort();
    c
}

fn random_spec(rng: &mut impl Rng, length: usize) -> AugmentationSpec {
    match rng.random_range(0..7) {
        0 => AugmentationSpec::GaussianNoise {
            sigma: rng.random_range(0.0..0.5),
        },
        1 => AugmentationSpec::Scale {
            mean: rng.random_range(0.5..1.5),
            sigma: rng.random_range(0.0..0.3),
        },
        2 => AugmentationSpec::Negate,
        3 => AugmentationSpec::TimeReverse,
        4 => AugmentationSpec::ChannelShuffle,
        5 => AugmentationSpec::SegmentPermute {
            segments: rng.random_range(2..=length.min(8)),
        },
        _ => AugmentationSpec::TimeWarp {
            knots: rng.random_range(2..=6),
            sigma: rng.random_range(0.0..0.5),
        },
    }
}

/// Structural invariants over `n` random windows and random pipelines.
pub fn invariants(n: usize) -> Result<(), String> {
    let mut rng = rng_from(0xa0);
    for case in 0..n {
        let channels = rng.random_range(1..=4);
        let length = if case % 50 == 0 {
            512
        } else {
            rng.random_range(2..=64)
        };
        let w = random_window(case as u64, channels, length);
        let seed = rng.random::<u64>();

        let specs: Vec<AugmentationSpec> = (0..rng.random_range(0..=4))
            .map(|_| random_spec(&mut rng, length))
            .collect();
        let pipeline = Pipeline::new(specs);
        pipeline.validate(length).map_err(|e| e.to_string())?;
        let out = augment(&w, &pipeline, seed);
        ensure(
            out.values.len() == w.values.len() && out.channels == w.channels,
            || format!("case {case}: shape changed under {pipeline:?}"),
        )?;
        ensure(
            out.labels == w.labels
                && out.participant_id == w.participant_id
                && out.split == w.split,
            || format!("case {case}: metadata changed"),
        )?;
        ensure(augment(&w, &pipeline, seed) == out, || {
            format!("case {case}: not deterministic")
        })?;

        for involution in [AugmentationSpec::Negate, AugmentationSpec::TimeReverse] {
            let p = single(involution.clone());
            ensure(augment(&augment(&w, &p, seed), &p, seed ^ 1) == w, || {
                format!("case {case}: {involution:?} twice is not the identity")
            })?;
        }
        let shuffled = augment(&w, &single(AugmentationSpec::ChannelShuffle), seed);
        ensure(channels_sorted(&shuffled) == channels_sorted(&w), || {
            format!("case {case}: channel shuffle is not a permutation of channels")
        })?;
        let segments = rng.random_range(2..=length.min(8));
        let permuted = augment(
            &w,
            &single(AugmentationSpec::SegmentPermute { segments }),
            seed,
        );
        ensure(
            sorted(permuted.values.clone()) == sorted(w.values.clone()),
            || format!("case {case}: segment permutation changed the value multiset"),
        )?;
        let zero_noise = augment(
            &w,
            &single(AugmentationSpec::GaussianNoise { sigma: 0.0 }),
            seed,
        );
        ensure(zero_noise == w, || {
            format!("case {case}: sigma 0 noise changed the window")
        })?;

        let speed = Normal::new(1.0, rng.random_range(0.0..0.6)).unwrap();
        let speeds: Vec<f64> = (0..rng.random_range(2..=6))
            .map(|_| speed.sample(&mut rng))
            .collect();
        let map = time_warp_map(length, &speeds);
        ensure(
            map.len() == length && map[0] == 0.0 && map[length - 1] == (length - 1) as f64,
            || {
                format!(
                    "case {case}: warp endpoints {:?}",
                    (map.first(), map.last())
                )
            },
        )?;
        ensure(map.windows(2).all(|p| p[1] > p[0]), || {
            format!("case {case}: warp map not strictly increasing for speeds {speeds:?}")
        })?;
    }
    Ok(())
}

pub fn worked_examples() -> Result<(), String> {
    let negated = augment(
        &window("a", 1, vec![-1.0, 2.0, 0.0]),
        &single(AugmentationSpec::Negate),
        0,
    );
    ensure(negated.values == [1.0, -2.0, 0.0], || {
        format!("negate: {:?}", negated.values)
    })?;
    let rev = augment(
        &window("a", 1, vec![1.0, 2.0, 3.0]),
        &single(AugmentationSpec::TimeReverse),
        0,
    );
    ensure(rev.values == [3.0, 2.0, 1.0], || {
        format!("reverse: {:?}", rev.values)
    })?;
    let values: Vec<f64> = (1..=8).map(f64::from).collect();
    let permuted = permute_segments(&values, 1, &[2, 0, 3, 1]);
    ensure(permuted == [5.0, 6.0, 1.0, 2.0, 7.0, 8.0, 3.0, 4.0], || {
        format!("segment permutation: {permuted:?}")
    })?;

    let w = random_window(7, 3, 512);
    let (a, b) = make_view_pair(&w, &single(AugmentationSpec::Negate), 3);
    let negated = augment(&w, &single(AugmentationSpec::Negate), 0);
    ensure(a == negated && b == negated, || {
        "deterministic pipeline gave differing views".into()
    })?;
    let (a, b) = make_view_pair(&w, &Pipeline::default(), 3);
    ensure(a == w && b == w, || {
        "empty pipeline changed the window".into()
    })
}

pub const SCALE_DRAWS: usize = 10_000;

/// Mean scale factor over 10,000 seeded draws, and the tolerance
/// `3 * sigma / sqrt(draws)`.
pub fn scale_mean() -> Result<(f64, f64), String> {
    let p = single(AugmentationSpec::Scale {
        mean: 1.0,
        sigma: 0.1,
    });
    let ones = window("s", 1, vec![1.0; 4]);
    let mean = (0..SCALE_DRAWS as u64)
        .map(|s| augment(&ones, &p, s).values[0])
        .sum::<f64>()
        / SCALE_DRAWS as f64;
    let tol = 3.0 * 0.1 / (SCALE_DRAWS as f64).sqrt();
    ensure((mean - 1.0).abs() <= tol, || {
        format!("scale mean {mean} outside 1 +- {tol}")
    })?;
    Ok((mean, tol))
}

/// Sample deviation of `view - window` for both views of a 3 x 512 window.
pub fn noise_sigma() -> Result<[f64; 2], String> {
    let w = random_window(11, 3, 512);
    let (a, b) = make_view_pair(
        &w,
        &single(AugmentationSpec::GaussianNoise { sigma: 0.05 }),
        5,
    );
    ensure(a != b, || "noise views are identical".into())?;
    let sd = |v: &Window| {
        let d: Vec<f64> = v.values.iter().zip(&w.values).map(|(x, y)| x - y).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        (d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (d.len() - 1) as f64).sqrt()
    };
    let s = [sd(&a), sd(&b)];
    for v in s {
        ensure((v - 0.05).abs() <= 0.2 * 0.05, || {
            format!("noise sd {v} outside 0.05 +- 20%")
        })?;
    }
    Ok(s)
}

pub fn suite() -> Outcome {
    invariants(WINDOWS)?;
    worked_examples()?;
    let (mean, tol) = scale_mean()?;
    let [s1, s2] = noise_sigma()?;
    Ok(format!(
        "invariants hold over {WINDOWS} windows; scale mean {mean:.4} (tol {tol:.4}); noise sd {s1:.4}/{s2:.4}"
    ))
}
