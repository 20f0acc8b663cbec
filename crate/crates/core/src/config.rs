//! Run configuration, read from TOML.
//!
//! ```toml
//! method = "simclr"          # simclr | byol | supervised-baseline | random-encoder
//! seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
//! protocol = "full"          # full: pretrain per seed; probe-only: pretrain once, re-seed the probe
//! tasks = ["all"]
//! output_dir = "runs/demo"
//! # optional top-level overrides of the method section
//! batch_size = 64
//! epochs = 50
//! window_length = 512
//!
//! [optimizer]                # optional
//! learning_rate = 0.1
//!
//! [data]
//! source = "synthetic"       # or "csv" with actigraphy_csv / labels_csv
//! [data.synthetic]
//! n_participants = 200
//!
//! [preprocess]
//! [simclr]
//! [byol]
//! [supervised]
//! [probe]
//! ```
//!
//! Every section is optional; missing keys take their defaults and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::Pipeline;
use crate::byol::ByolConfig;
use crate::data::{PreprocessConfig, SyntheticConfig, Task};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::nn::OptimizerKind;
use crate::simclr::SimclrConfig;
use crate::supervised::SupervisedConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Simclr,
    Byol,
    SupervisedBaseline,
    RandomEncoder,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Simclr,
        Method::Byol,
        Method::SupervisedBaseline,
        Method::RandomEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Simclr => "simclr",
            Method::Byol => "byol",
            Method::SupervisedBaseline => "supervised-baseline",
            Method::RandomEncoder => "random-encoder",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "method",
                    format!("unknown method {s:?}; expected simclr, byol, supervised-baseline or random-encoder"),
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Pretraining is repeated for every seed.
    Full,
    /// One pretraining run with the first seed; only the probe is re-seeded.
    ProbeOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub actigraphy_csv: Option<PathBuf>,
    pub labels_csv: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            actigraphy_csv: None,
            labels_csv: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Optimizer settings applied on top of the method section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOverrides {
    pub learning_rate: Option<f64>,
    /// BYOL only; SimCLR always uses LARS and the supervised baseline Adam.
    pub kind: Option<OptimizerKind>,
    pub trust_coefficient: Option<f64>,
    pub weight_decay: Option<f64>,
    pub momentum: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub protocol: Protocol,
    /// Task names, or `["all"]`.
    pub tasks: Vec<String>,
    pub output_dir: PathBuf,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub window_length: Option<usize>,
    /// Replaces the method's augmentation pipeline.
    pub pipeline: Option<Pipeline>,
    pub optimizer: OptimizerOverrides,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub simclr: SimclrConfig,
    pub byol: ByolConfig,
    pub supervised: SupervisedConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Simclr,
            seeds: (0..10).collect(),
            protocol: Protocol::Full,
            tasks: vec!["all".into()],
            output_dir: PathBuf::from("runs"),
            batch_size: None,
            epochs: None,
            window_length: None,
            pipeline: None,
            optimizer: OptimizerOverrides::default(),
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            simclr: SimclrConfig::default(),
            byol: ByolConfig::default(),
            supervised: SupervisedConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    })
}

/// Parses `N`, `N..M` (half-open) or `N..=M`.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| Error::config("seeds", format!("{s:?} is not a seed")))
    };
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        vec![num(text)?]
    };
    if seeds.is_empty() {
        return Err(Error::config(
            "seeds",
            format!("{text:?} is an empty range"),
        ));
    }
    Ok(seeds)
}

/// Parses `all` or a comma-separated list of task names.
pub fn parse_tasks(items: &[String]) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for item in items.iter().flat_map(|s| s.split(',')) {
        let item = item.trim();
        if item == "all" {
            return Ok(Task::ALL.to_vec());
        }
        let task: Task = item
            .parse()
            .map_err(|_| Error::config("tasks", format!("unknown task {item:?}")))?;
        if !tasks.contains(&task) {
            tasks.push(task);
        }
    }
    if tasks.is_empty() {
        return Err(Error::config("tasks", "no tasks selected"));
    }
    tasks.sort();
    Ok(tasks)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into()),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Folds the top-level overrides into the method sections and the
    /// preprocessing window length. The result has no pending overrides.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(b) = c.batch_size.take() {
            c.simclr.batch_size = b;
            c.byol.batch_size = b;
            c.supervised.batch_size = b;
        }
        if let Some(e) = c.epochs.take() {
            c.simclr.epochs = e;
            c.byol.epochs = e;
            c.supervised.epochs = e;
        }
        if let Some(l) = c.window_length.take() {
            c.preprocess.window_length = l;
        }
        if let Some(p) = c.pipeline.take() {
            match c.method {
                Method::Byol => c.byol.pipeline = p,
                _ => c.simclr.pipeline = p,
            }
        }
        let o = std::mem::take(&mut c.optimizer);
        if let Some(lr) = o.learning_rate {
            match c.method {
                Method::Simclr => c.simclr.learning_rate = Some(lr),
                Method::Byol => c.byol.learning_rate = Some(lr),
                Method::SupervisedBaseline => c.supervised.learning_rate = lr,
                Method::RandomEncoder => {}
            }
        }
        if let Some(k) = o.kind {
            c.byol.optimizer = k;
        }
        for lars in [&mut c.simclr.lars, &mut c.byol.lars] {
            if let Some(v) = o.trust_coefficient {
                lars.trust_coefficient = v;
            }
            if let Some(v) = o.weight_decay {
                lars.weight_decay = v;
            }
            if let Some(v) = o.momentum {
                lars.momentum = v;
            }
        }
        c
    }

    /// Checks every field; nothing runs before this passes.
    pub fn validate(&self) -> Result<()> {
        let c = self.resolved();
        if c.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = c.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != c.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        parse_tasks(&c.tasks)?;
        if c.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        match c.data.source {
            DataSource::Synthetic => in_section("data.synthetic", c.data.synthetic.validate())?,
            DataSource::Csv => {
                if c.data.actigraphy_csv.is_none() || c.data.labels_csv.is_none() {
                    return Err(Error::config(
                        "data.actigraphy_csv",
                        "csv source needs actigraphy_csv and labels_csv",
                    ));
                }
            }
        }
        in_section("preprocess", c.preprocess.validate())?;
        let length = c.preprocess.window_length;
        in_section("simclr", c.simclr.validate(length))?;
        in_section("byol", c.byol.validate(length))?;
        in_section("supervised", c.supervised.validate(length))?;
        in_section("probe", c.probe.validate())?;
        let channels = c.preprocess.channels.len();
        if c.simclr.architecture.channels != channels
            || c.supervised.architecture.channels != channels
        {
            return Err(Error::config(
                "simclr.architecture.channels",
                format!("must equal the {channels} preprocessed channels"),
            ));
        }
        Ok(())
    }

    pub fn task_list(&self) -> Result<Vec<Task>> {
        parse_tasks(&self.tasks)
    }

    /// Seeds whose pretraining runs are needed under the protocol.
    pub fn pretrain_seeds(&self) -> Vec<u64> {
        match self.protocol {
            Protocol::Full => self.seeds.clone(),
            Protocol::ProbeOnly => self.seeds.iter().take(1).copied().collect(),
        }
    }
}
