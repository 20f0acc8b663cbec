//! Records to windows: gap handling, participant-level split, train-fit
//! normalization, non-overlapping segmentation.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::records::ParticipantRecord;
use super::window::{Split, Window, CHANNELS, WINDOW_LENGTH};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, stream};

/// Smallest standard deviation used when z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Linearly interpolate gaps of at most `max_gap` samples.
    pub interpolate_gaps: bool,
    pub max_gap: usize,
    /// Z-score continuous channels with train-split statistics.
    pub normalize: bool,
    pub window_length: usize,
    /// Train, validation and test fractions of participants.
    pub split: [f64; 3],
    /// Channels kept, by name; a subset of `activity`, `light`, `sleep_wake`.
    pub channels: Vec<String>,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            interpolate_gaps: true,
            max_gap: 10,
            normalize: true,
            window_length: WINDOW_LENGTH,
            split: [0.8, 0.1, 0.1],
            channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 {
            return Err(Error::config("window_length", "must be positive"));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "split",
                "fractions must lie in [0, 1] and sum to 1",
            ));
        }
        if self.channels.is_empty() {
            return Err(Error::config(
                "channels",
                "at least one channel is required",
            ));
        }
        for c in &self.channels {
            if !CHANNELS.contains(&c.as_str()) {
                return Err(Error::config("channels", format!("unknown channel {c:?}")));
            }
        }
        Ok(())
    }

    fn channel_indices(&self) -> Vec<usize> {
        self.channels
            .iter()
            .map(|c| CHANNELS.iter().position(|k| k == c).expect("validated"))
            .collect()
    }
}

/// Per-channel statistics used for z-scoring, in the order of the kept channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels passed through unchanged (the binary sleep/wake flag).
    pub passthrough: Vec<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct PreprocessReport {
    pub imputed_cells: usize,
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
    /// Usable samples per included participant, in window order.
    pub usable_samples: Vec<(String, usize)>,
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub windows: Vec<Window>,
    pub normalization: Normalization,
    pub report: PreprocessReport,
}

impl Preprocessed {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Window> {
        self.windows.iter().filter(move |w| w.split == split)
    }
}

/// Train/val/test participant counts: validation and test are rounded
/// shares, train takes the rest.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let val = (fractions[1] * n as f64).round() as usize;
    let test = ((fractions[2] * n as f64).round() as usize).min(n - val.min(n));
    [n - val.min(n) - test, val.min(n), test]
}

/// Seeded participant-level assignment. Ids are sorted before shuffling so
/// the result does not depend on input order.
pub fn assign_splits(ids: &[String], fractions: [f64; 3], seed: u64) -> Vec<(String, Split)> {
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.shuffle(&mut derived_rng(seed, &[stream::SPLIT]));
    let [train, val, _] = split_sizes(sorted.len(), fractions);
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect()
}

/// Fills interior gaps of at most `max_gap` samples by linear interpolation;
/// returns how many cells were filled.
pub fn interpolate_gaps(series: &mut [f64], max_gap: usize) -> usize {
    let mut filled = 0;
    let mut i = 0;
    while i < series.len() {
        if !series[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < series.len() && series[i].is_nan() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == series.len() || len > max_gap {
            continue;
        }
        let (a, b) = (series[start - 1], series[i]);
        for k in 0..len {
            let frac = (k + 1) as f64 / (len + 1) as f64;
            series[start + k] = a + (b - a) * frac;
        }
        filled += len;
    }
    filled
}

/// Maximal runs of time indices where every channel is finite.
fn usable_runs(channels: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let len = channels.first().map_or(0, Vec::len);
    let mut runs = Vec::new();
    let mut start = None;
    for t in 0..=len {
        let ok = t < len && channels.iter().all(|c| c[t].is_finite());
        match (ok, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    runs
}

pub fn preprocess(
    records: &[ParticipantRecord],
    config: &PreprocessConfig,
) -> Result<Preprocessed> {
    config.validate()?;
    let kept = config.channel_indices();
    let length = config.window_length;
    let mut report = PreprocessReport::default();

    let mut ids = BTreeSet::new();
    for r in records {
        if !ids.insert(r.participant_id.as_str()) {
            return Err(Error::InsufficientData(format!(
                "participant {:?} appears in more than one record",
                r.participant_id
            )));
        }
    }

    // (1) gaps
    struct Cleaned<'a> {
        record: &'a ParticipantRecord,
        channels: Vec<Vec<f64>>,
        runs: Vec<(usize, usize)>,
    }
    let mut cleaned = Vec::new();
    for record in records {
        let mut channels: Vec<Vec<f64>> =
            kept.iter().map(|&c| record.channels[c].clone()).collect();
        if config.interpolate_gaps {
            for (series, &c) in channels.iter_mut().zip(&kept) {
                report.imputed_cells += interpolate_gaps(series, config.max_gap);
                if CHANNELS[c] == "sleep_wake" {
                    series
                        .iter_mut()
                        .filter(|v| v.is_finite())
                        .for_each(|v| *v = v.round());
                }
            }
        }
        let runs: Vec<(usize, usize)> = usable_runs(&channels)
            .into_iter()
            .filter(|(s, e)| e - s >= length)
            .collect();
        let usable: usize = runs.iter().map(|(s, e)| e - s).sum();
        if usable < length {
            let msg = format!(
                "participant {:?} has fewer than {length} usable contiguous samples; excluded",
                record.participant_id
            );
            log::warn!("{msg}");
            report.warnings.push(msg);
            report.excluded.push(record.participant_id.clone());
            continue;
        }
        cleaned.push(Cleaned {
            record,
            channels,
            runs,
        });
    }

    // (4) participant-level split, needed before fitting normalization
    let included: Vec<String> = cleaned
        .iter()
        .map(|c| c.record.participant_id.clone())
        .collect();
    let assignment: std::collections::BTreeMap<String, Split> =
        assign_splits(&included, config.split, config.seed)
            .into_iter()
            .collect();

    // (2) z-score statistics from train participants only
    let passthrough: Vec<bool> = kept.iter().map(|&c| CHANNELS[c] == "sleep_wake").collect();
    let mut mean = vec![0.0; kept.len()];
    let mut std = vec![1.0; kept.len()];
    if config.normalize {
        let mut sum = vec![0.0; kept.len()];
        let mut sum_sq = vec![0.0; kept.len()];
        let mut count = 0usize;
        for c in cleaned
            .iter()
            .filter(|c| assignment[&c.record.participant_id] == Split::Train)
        {
            for &(s, e) in &c.runs {
                for (k, series) in c.channels.iter().enumerate() {
                    for v in &series[s..e] {
                        sum[k] += v;
                        sum_sq[k] += v * v;
                    }
                }
                count += e - s;
            }
        }
        if count == 0 {
            return Err(Error::InsufficientData(
                "no train-split samples to fit normalization".into(),
            ));
        }
        for k in 0..kept.len() {
            if passthrough[k] {
                continue;
            }
            let m = sum[k] / count as f64;
            let var = (sum_sq[k] / count as f64 - m * m).max(0.0);
            mean[k] = m;
            std[k] = var.sqrt().max(STD_FLOOR);
        }
    }

    // (3) non-overlapping windows, remainder dropped
    let mut windows = Vec::new();
    for c in &cleaned {
        let id = &c.record.participant_id;
        let split = assignment[id];
        let mut usable = 0;
        for &(s, e) in &c.runs {
            usable += e - s;
            for w in 0..(e - s) / length {
                let from = s + w * length;
                let mut values = Vec::with_capacity(kept.len() * length);
                for (k, series) in c.channels.iter().enumerate() {
                    values.extend(series[from..from + length].iter().map(|v| {
                        if config.normalize && !passthrough[k] {
                            (v - mean[k]) / std[k]
                        } else {
                            *v
                        }
                    }));
                }
                windows.push(Window::new(
                    id.clone(),
                    kept.len(),
                    values,
                    c.record.labels,
                    split,
                )?);
            }
        }
        report.usable_samples.push((id.clone(), usable));
    }
    assert_no_leakage(&windows)?;
    Ok(Preprocessed {
        windows,
        normalization: Normalization {
            mean,
            std,
            passthrough,
        },
        report,
    })
}

/// Fails if any participant has windows in more than one split.
pub fn assert_no_leakage(windows: &[Window]) -> Result<()> {
    let mut seen: std::collections::HashMap<&str, Split> = std::collections::HashMap::new();
    for w in windows {
        if let Some(prev) = seen.insert(&w.participant_id, w.split) {
            if prev != w.split {
                return Err(Error::InsufficientData(format!(
                    "participant {:?} appears in both {prev:?} and {:?}",
                    w.participant_id, w.split
                )));
            }
        }
    }
    Ok(())
}
