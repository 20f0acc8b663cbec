use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples per window.
pub const WINDOW_LENGTH: usize = 512;
/// Seconds between consecutive samples.
pub const SAMPLE_PERIOD_SECS: i64 = 30;
/// Activity count, light level, sleep/wake flag.
pub const CHANNELS: [&str; 3] = ["activity", "light", "sleep_wake"];

/// The five downstream classification tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SleepApnea,
    Diabetes,
    Insomnia,
    Hypertension,
    MetabolicSyndrome,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::SleepApnea,
        Task::Diabetes,
        Task::Insomnia,
        Task::Hypertension,
        Task::MetabolicSyndrome,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::SleepApnea => "sleep_apnea",
            Task::Diabetes => "diabetes",
            Task::Insomnia => "insomnia",
            Task::Hypertension => "hypertension",
            Task::MetabolicSyndrome => "metabolic_syndrome",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Task::SleepApnea => "Sleep Apnea",
            Task::Diabetes => "Diabetes",
            Task::Insomnia => "Insomnia",
            Task::Hypertension => "Hypertension",
            Task::MetabolicSyndrome => "Metabolic Syndrome",
        }
    }

    /// Class names indexed by their integer code in the labels file.
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Task::SleepApnea | Task::Hypertension | Task::MetabolicSyndrome => &["no", "yes"],
            Task::Diabetes => &["non-diabetic", "pre-diabetic", "diabetic"],
            Task::Insomnia => &[
                "not clinically significant",
                "subthreshold",
                "moderate to severe",
            ],
        }
    }

    pub fn n_classes(self) -> usize {
        self.classes().len()
    }

    /// Class prevalences of the reference cohort, indexed by class code.
    pub fn reference_prevalence(self) -> &'static [f64] {
        match self {
            Task::SleepApnea => &[0.9175, 0.0825],
            Task::Diabetes => &[0.469, 0.350, 0.181],
            Task::Insomnia => &[0.598, 0.225, 0.177],
            Task::Hypertension => &[0.749, 0.251],
            Task::MetabolicSyndrome => &[0.663, 0.337],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| Error::config("tasks", format!("unknown task {s:?}")))
    }
}

/// Per-participant class codes, indexed by [`Task::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels(pub [u8; 5]);

impl Labels {
    pub fn get(&self, task: Task) -> usize {
        self.0[task.index()] as usize
    }

    pub fn set(&mut self, task: Task, class: usize) {
        self.0[task.index()] = class as u8;
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for task in Task::ALL {
            if self.get(task) >= task.n_classes() {
                return Err(format!(
                    "{} code {} outside 0..{}",
                    task.name(),
                    self.get(task),
                    task.n_classes()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// One fixed-length multichannel segment of a participant's trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub participant_id: String,
    pub channels: usize,
    /// Channel-major `(channels, length)` values.
    pub values: Vec<f64>,
    pub labels: Labels,
    pub split: Split,
}

impl Window {
    pub fn new(
        participant_id: impl Into<String>,
        channels: usize,
        values: Vec<f64>,
        labels: Labels,
        split: Split,
    ) -> Result<Self> {
        if channels == 0 || !values.len().is_multiple_of(channels) {
            return Err(Error::Shape(format!(
                "{} values cannot be split into {channels} channels",
                values.len()
            )));
        }
        Ok(Self {
            participant_id: participant_id.into(),
            channels,
            values,
            labels,
            split,
        })
    }

    pub fn length(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let l = self.length();
        &self.values[c * l..(c + 1) * l]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Window {
        debug_assert_eq!(values.len(), self.values.len());
        Window {
            values,
            ..self.clone()
        }
    }
}

/// Stacks windows into a `(batch, channels, length)` tensor.
pub fn batch_tensor<'a, I>(windows: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a Window>,
{
    let mut data = Vec::new();
    let mut count = 0;
    let mut dims: Option<(usize, usize)> = None;
    for w in windows {
        let d = (w.channels, w.length());
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Shape(format!(
                    "window of shape {d:?} in a batch of {prev:?}"
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&w.values);
        count += 1;
    }
    let (c, l) = dims.ok_or_else(|| Error::Shape("empty batch".into()))?;
    Tensor::new(vec![count, c, l], data)
}
