//! Synthetic actigraphy cohort standing in for access-restricted study data.
//!
//! Each participant has latent circadian traits (activity amplitude, sleep
//! duration, acrophase, nocturnal awakenings, light exposure). Every task's
//! class shifts exactly one trait by a configurable delta, so labels are
//! recoverable from features that track those traits; with all deltas at
//! zero the traces carry no label information.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::records::ParticipantRecord;
use super::window::{Labels, Task, SAMPLE_PERIOD_SECS};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, rng_from, stream, RunRng};

/// 2024-01-01T00:00:00Z
pub const EPOCH_START: i64 = 1_704_067_200;

const SAMPLES_PER_HOUR: f64 = 3600.0 / SAMPLE_PERIOD_SECS as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prevalence {
    pub sleep_apnea: Vec<f64>,
    pub diabetes: Vec<f64>,
    pub insomnia: Vec<f64>,
    pub hypertension: Vec<f64>,
    pub metabolic_syndrome: Vec<f64>,
}

impl Default for Prevalence {
    fn default() -> Self {
        Self {
            sleep_apnea: Task::SleepApnea.reference_prevalence().to_vec(),
            diabetes: Task::Diabetes.reference_prevalence().to_vec(),
            insomnia: Task::Insomnia.reference_prevalence().to_vec(),
            hypertension: Task::Hypertension.reference_prevalence().to_vec(),
            metabolic_syndrome: Task::MetabolicSyndrome.reference_prevalence().to_vec(),
        }
    }
}

impl Prevalence {
    pub fn get(&self, task: Task) -> &[f64] {
        match task {
            Task::SleepApnea => &self.sleep_apnea,
            Task::Diabetes => &self.diabetes,
            Task::Insomnia => &self.insomnia,
            Task::Hypertension => &self.hypertension,
            Task::MetabolicSyndrome => &self.metabolic_syndrome,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for task in Task::ALL {
            let p = self.get(task);
            let field = format!("prevalence.{}", task.name());
            if p.len() != task.n_classes() {
                return Err(Error::config(
                    field,
                    format!("expected {} classes, got {}", task.n_classes(), p.len()),
                ));
            }
            if p.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return Err(Error::config(field, "every prevalence must lie in (0, 1)"));
            }
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::config(field, "prevalences must sum to 1"));
            }
        }
        Ok(())
    }
}

/// How far one class step moves the trait tied to each task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassEffects {
    /// Extra nocturnal awakenings per hour with sleep apnea.
    pub apnea_awakenings_per_hour: f64,
    /// Fractional loss of daytime activity amplitude per diabetes class.
    pub diabetes_amplitude: f64,
    /// Hours of sleep lost per insomnia class.
    pub insomnia_sleep_hours: f64,
    /// Circadian acrophase delay, in hours, with hypertension.
    pub hypertension_phase_hours: f64,
    /// Fractional loss of light exposure with metabolic syndrome.
    pub metabolic_light: f64,
}

impl Default for ClassEffects {
    fn default() -> Self {
        Self {
            apnea_awakenings_per_hour: 6.0,
            diabetes_amplitude: 0.3,
            insomnia_sleep_hours: 1.5,
            hypertension_phase_hours: 2.0,
            metabolic_light: 0.5,
        }
    }
}

impl ClassEffects {
    pub fn none() -> Self {
        Self {
            apnea_awakenings_per_hour: 0.0,
            diabetes_amplitude: 0.0,
            insomnia_sleep_hours: 0.0,
            hypertension_phase_hours: 0.0,
            metabolic_light: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_participants: usize,
    pub days: f64,
    /// Clock hour at which every recording starts; uniform per participant when unset.
    pub start_hour: Option<f64>,
    pub prevalence: Prevalence,
    /// Multiplier on every observation-noise standard deviation.
    pub noise: f64,
    /// Multiplier on between-participant trait spread.
    pub trait_spread: f64,
    pub effects: ClassEffects,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_participants: 200,
            days: 7.0,
            start_hour: None,
            prevalence: Prevalence::default(),
            noise: 1.0,
            trait_spread: 1.0,
            effects: ClassEffects::default(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 {
            return Err(Error::config("n_participants", "must be positive"));
        }
        if !(self.days > 0.0 && self.days.is_finite()) {
            return Err(Error::config("days", "must be positive"));
        }
        if let Some(h) = self.start_hour {
            if !(0.0..24.0).contains(&h) {
                return Err(Error::config("start_hour", "must lie in [0, 24)"));
            }
        }
        if !(self.noise >= 0.0) || !(self.trait_spread >= 0.0) {
            return Err(Error::config(
                "noise",
                "noise and trait_spread must be >= 0",
            ));
        }
        self.prevalence.validate()
    }

    pub fn samples_per_participant(&self) -> usize {
        (self.days * 24.0 * SAMPLES_PER_HOUR).round() as usize
    }
}

/// Draws every participant's labels independently from the configured prevalences.
pub fn sample_labels(config: &SyntheticConfig) -> Result<Vec<Labels>> {
    config.prevalence.validate()?;
    let dists = Task::ALL
        .iter()
        .map(|&t| WeightedIndex::new(config.prevalence.get(t)).expect("validated"))
        .collect::<Vec<_>>();
    Ok((0..config.n_participants)
        .map(|i| {
            let mut rng = derived_rng(config.seed, &[stream::SYNTHETIC, 0, i as u64]);
            let mut labels = Labels::default();
            for (task, dist) in Task::ALL.iter().zip(&dists) {
                labels.set(*task, dist.sample(&mut rng));
            }
            labels
        })
        .collect())
}

pub fn participant_id(index: usize) -> String {
    format!("P{:05}", index + 1)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<ParticipantRecord>> {
    config.validate()?;
    let labels = sample_labels(config)?;
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            synthesize_participant(
                participant_id(i),
                l,
                config,
                derive_seed(config.seed, &[stream::SYNTHETIC, 1, i as u64]),
            )
        })
        .collect())
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

/// One participant's trace; a pure function of its arguments.
pub fn synthesize_participant(
    participant_id: String,
    labels: Labels,
    config: &SyntheticConfig,
    seed: u64,
) -> ParticipantRecord {
    let mut rng = rng_from(seed);
    let fx = &config.effects;
    let spread = config.trait_spread;
    let noise = config.noise;

    let start_hour = config
        .start_hour
        .unwrap_or_else(|| rng.sample(Uniform::new(0.0, 24.0).expect("valid range")));
    let start_hour = (start_hour * SAMPLES_PER_HOUR).round() / SAMPLES_PER_HOUR;

    let lognormal = |rng: &mut RunRng, sigma: f64| {
        LogNormal::new(0.0, sigma.max(0.0) + f64::MIN_POSITIVE)
            .expect("valid sigma")
            .sample(rng)
    };
    let normal = |rng: &mut RunRng, sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
        } else {
            0.0
        }
    };

    let amplitude = 300.0
        * lognormal(&mut rng, 0.15 * spread)
        * (1.0 - fx.diabetes_amplitude * labels.get(Task::Diabetes) as f64).max(0.05);
    let sleep_hours = (8.0 + normal(&mut rng, 0.5 * spread)
        - fx.insomnia_sleep_hours * labels.get(Task::Insomnia) as f64)
        .clamp(2.0, 14.0);
    let acrophase = 15.0
        + normal(&mut rng, 0.75 * spread)
        + fx.hypertension_phase_hours * labels.get(Task::Hypertension) as f64;
    let awakenings = 0.5 + fx.apnea_awakenings_per_hour * labels.get(Task::SleepApnea) as f64;
    let light = 400.0
        * lognormal(&mut rng, 0.2 * spread)
        * (1.0 - fx.metabolic_light * labels.get(Task::MetabolicSyndrome) as f64).max(0.05);

    let n = config.samples_per_participant();
    let mut activity = Vec::with_capacity(n);
    let mut lux = Vec::with_capacity(n);
    let mut wake = Vec::with_capacity(n);
    let burst_p = awakenings / SAMPLES_PER_HOUR;
    let mut burst_left = 0usize;
    for t in 0..n {
        let hour = (start_hour + t as f64 / SAMPLES_PER_HOUR).rem_euclid(24.0);
        let phase = (2.0 * std::f64::consts::PI * (hour - acrophase) / 24.0).cos();
        let asleep = circular_distance(hour, acrophase + 12.0) < sleep_hours / 2.0;
        let (a, l, w) = if asleep {
            if burst_left == 0 && rng.random::<f64>() < burst_p {
                burst_left = rng.random_range(2..=6);
            }
            if burst_left > 0 {
                burst_left -= 1;
                let a = amplitude * 0.4 * (1.0 + normal(&mut rng, 0.3 * noise));
                (a, 2.0 * lognormal(&mut rng, 0.5 * noise), 1.0)
            } else {
                let a = (amplitude * 0.02 * (1.0 + normal(&mut rng, 1.0 * noise))).abs();
                (a, 0.5 * lognormal(&mut rng, 0.5 * noise), 0.0)
            }
        } else {
            burst_left = 0;
            let base = amplitude * (0.35 + 0.65 * phase.max(-0.5));
            let a = base + normal(&mut rng, 0.35 * amplitude * noise);
            let l = light * phase.max(0.05) + normal(&mut rng, 0.2 * light * noise);
            (a, l, 1.0)
        };
        activity.push(a.max(0.0));
        lux.push(l.max(0.0));
        wake.push(w);
    }
    ParticipantRecord {
        participant_id,
        start: EPOCH_START + (start_hour * 3600.0).round() as i64,
        channels: vec![activity, lux, wake],
        labels,
    }
}
