//! Stochastic time-series transformations and their composition into view pairs.
//!
//! Every transform maps a `(channels, length)` signal to one of the same
//! shape. A [`Pipeline`] applies its transforms in exactly the configured
//! order, drawing all randomness from one seeded stream.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, RunRng};

fn default_segments() -> usize {
    4
}

fn default_knots() -> usize {
    4
}

fn default_warp_sigma() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentationSpec {
    /// Adds i.i.d. `N(0, sigma)` noise to every sample of every channel.
    GaussianNoise {
        sigma: f64,
    },
    /// Multiplies each channel by its own factor drawn from `N(mean, sigma)`.
    Scale {
        mean: f64,
        sigma: f64,
    },
    Negate,
    TimeReverse,
    /// Randomly permutes the channels.
    ChannelShuffle,
    /// Cuts the time axis into `segments` contiguous pieces and reorders them.
    SegmentPermute {
        #[serde(default = "default_segments")]
        segments: usize,
    },
    /// Resamples along a random monotone piecewise-linear time remap.
    TimeWarp {
        #[serde(default = "default_knots")]
        knots: usize,
        #[serde(default = "default_warp_sigma")]
        sigma: f64,
    },
}

impl AugmentationSpec {
    pub fn validate(&self, length: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::config("pipeline", msg));
        match *self {
            AugmentationSpec::GaussianNoise { sigma } | AugmentationSpec::Scale { sigma, .. }
                if !(sigma >= 0.0 && sigma.is_finite()) =>
            {
                bad(format!("sigma must be a finite value >= 0, got {sigma}"))
            }
            AugmentationSpec::Scale { mean, .. } if !mean.is_finite() => {
                bad(format!("scale mean must be finite, got {mean}"))
            }
            AugmentationSpec::SegmentPermute { segments } if segments < 2 || segments > length => {
                bad(format!(
                    "segment_permute needs 2 <= segments <= {length}, got {segments}"
                ))
            }
            AugmentationSpec::TimeWarp { knots, sigma } => {
                if knots < 2 {
                    bad(format!("time_warp needs at least 2 knots, got {knots}"))
                } else if !(sigma >= 0.0 && sigma.is_finite()) {
                    bad(format!("time_warp sigma must be >= 0, got {sigma}"))
                } else if length < 2 {
                    bad("time_warp needs a window of at least 2 samples".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn is_stochastic(&self) -> bool {
        match *self {
            AugmentationSpec::GaussianNoise { sigma } | AugmentationSpec::Scale { sigma, .. } => {
                sigma > 0.0
            }
            AugmentationSpec::Negate | AugmentationSpec::TimeReverse => false,
            AugmentationSpec::ChannelShuffle
            | AugmentationSpec::SegmentPermute { .. }
            | AugmentationSpec::TimeWarp { .. } => true,
        }
    }

    /// Applies the transform in place to channel-major `values`.
    pub fn apply(&self, values: &mut [f64], channels: usize, rng: &mut RunRng) {
        let length = values.len() / channels;
        match *self {
            AugmentationSpec::GaussianNoise { sigma } => {
                if sigma > 0.0 {
                    let noise = Normal::new(0.0, sigma).expect("validated sigma");
                    for v in values.iter_mut() {
                        *v += noise.sample(rng);
                    }
                }
            }
            AugmentationSpec::Scale { mean, sigma } => {
                let dist = Normal::new(mean, sigma).expect("validated sigma");
                for channel in values.chunks_mut(length) {
                    let factor = dist.sample(rng);
                    channel.iter_mut().for_each(|v| *v *= factor);
                }
            }
            AugmentationSpec::Negate => values.iter_mut().for_each(|v| *v = -*v),
            AugmentationSpec::TimeReverse => {
                for channel in values.chunks_mut(length) {
                    channel.reverse();
                }
            }
            AugmentationSpec::ChannelShuffle => {
                let mut order: Vec<usize> = (0..channels).collect();
                order.shuffle(rng);
                let source = values.to_vec();
                for (dst, &src) in order.iter().enumerate() {
                    values[dst * length..(dst + 1) * length]
                        .copy_from_slice(&source[src * length..(src + 1) * length]);
                }
            }
            AugmentationSpec::SegmentPermute { segments } => {
                let mut order: Vec<usize> = (0..segments).collect();
                order.shuffle(rng);
                let permuted = permute_segments(values, channels, &order);
                values.copy_from_slice(&permuted);
            }
            AugmentationSpec::TimeWarp { knots, sigma } => {
                let speed = Normal::new(1.0, sigma).expect("validated sigma");
                let speeds: Vec<f64> = (0..knots).map(|_| speed.sample(rng)).collect();
                let map = time_warp_map(length, &speeds);
                for channel in values.chunks_mut(length) {
                    let source = channel.to_vec();
                    for (dst, &tau) in channel.iter_mut().zip(&map) {
                        *dst = interpolate(&source, tau);
                    }
                }
            }
        }
    }
}

/// Segment `i` spans `[i * length / n, (i + 1) * length / n)`. The output is
/// the concatenation of segments `order[0], order[1], ...`, identically for
/// every channel.
pub fn permute_segments(values: &[f64], channels: usize, order: &[usize]) -> Vec<f64> {
    let length = values.len() / channels;
    let n = order.len();
    let bounds: Vec<usize> = (0..=n).map(|i| i * length / n).collect();
    let mut out = Vec::with_capacity(values.len());
    for channel in values.chunks(length) {
        for &seg in order {
            out.extend_from_slice(&channel[bounds[seg]..bounds[seg + 1]]);
        }
    }
    out
}

/// Source time for every output sample under a piecewise-linear warp.
///
/// The time axis `[0, length - 1]` is cut into `speeds.len()` equal pieces;
/// piece `i` is mapped onto a source interval proportional to `speeds[i]`
/// (floored at a small positive value), so the map is strictly increasing and
/// fixes both endpoints.
pub fn time_warp_map(length: usize, speeds: &[f64]) -> Vec<f64> {
    const MIN_SPEED: f64 = 0.05;
    let last = (length - 1) as f64;
    let n = speeds.len();
    let speeds: Vec<f64> = speeds.iter().map(|s| s.max(MIN_SPEED)).collect();
    let total: f64 = speeds.iter().sum();
    let mut warped = Vec::with_capacity(n + 1);
    warped.push(0.0);
    let mut acc = 0.0;
    for s in &speeds {
        acc += s;
        warped.push(last * acc / total);
    }
    warped[n] = last;
    (0..length)
        .map(|t| {
            if t == length - 1 {
                return last;
            }
            let pos = t as f64 / last * n as f64;
            let piece = (pos.floor() as usize).min(n - 1);
            let frac = pos - piece as f64;
            warped[piece] + frac * (warped[piece + 1] - warped[piece])
        })
        .collect()
}

fn interpolate(series: &[f64], tau: f64) -> f64 {
    let lo = tau.floor() as usize;
    if lo + 1 >= series.len() {
        return series[series.len() - 1];
    }
    let frac = tau - lo as f64;
    series[lo] * (1.0 - frac) + series[lo + 1] * frac
}

/// An ordered list of transforms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pipeline(pub Vec<AugmentationSpec>);

impl Pipeline {
    pub fn new(specs: Vec<AugmentationSpec>) -> Self {
        Self(specs)
    }

    /// Negation, segment permutation, time reversal, channel shuffle, scaling.
    pub fn simclr_default() -> Self {
        Self(vec![
            AugmentationSpec::Negate,
            AugmentationSpec::SegmentPermute { segments: 4 },
            AugmentationSpec::TimeReverse,
            AugmentationSpec::ChannelShuffle,
            AugmentationSpec::Scale {
                mean: 1.0,
                sigma: 0.1,
            },
        ])
    }

    /// Gaussian noise, scaling, negation.
    pub fn byol_default() -> Self {
        Self(vec![
            AugmentationSpec::GaussianNoise { sigma: 0.05 },
            AugmentationSpec::Scale {
                mean: 1.0,
                sigma: 0.1,
            },
            AugmentationSpec::Negate,
        ])
    }

    pub fn specs(&self) -> &[AugmentationSpec] {
        &self.0
    }

    pub fn validate(&self, length: usize) -> Result<()> {
        self.0.iter().try_for_each(|s| s.validate(length))
    }

    pub fn is_stochastic(&self) -> bool {
        self.0.iter().any(AugmentationSpec::is_stochastic)
    }

    pub fn apply(&self, values: &mut [f64], channels: usize, rng: &mut RunRng) {
        for spec in &self.0 {
            spec.apply(values, channels, rng);
        }
    }
}

/// Applies `pipeline` to `window`; a pure function of its arguments.
pub fn augment(window: &Window, pipeline: &Pipeline, seed: u64) -> Window {
    let mut values = window.values.clone();
    pipeline.apply(&mut values, window.channels, &mut rng_from(seed));
    window.with_values(values)
}

/// Two independent draws of `pipeline` on the same window.
pub fn make_view_pair(window: &Window, pipeline: &Pipeline, seed: u64) -> (Window, Window) {
    (
        augment(window, pipeline, derive_seed(seed, &[0])),
        augment(window, pipeline, derive_seed(seed, &[1])),
    )
}
