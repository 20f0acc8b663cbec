//! The five run stages and where their artifacts live.
//!
//! ```text
//! <out>/config.toml                      resolved configuration (generate, preprocess)
//! <out>/actigraphy.csv, labels.csv       generate
//! <out>/windows.actw, preprocess.json    preprocess
//! <out>/<method>/config.toml             resolved configuration (pretrain, probe)
//! <out>/<method>/seed-<s>/model.ckpt     pretrain (supervised: model-<task>.ckpt)
//! <out>/<method>/seed-<s>/loss_history.csv
//! <out>/<method>/seed-<s>/metrics.json, metrics.txt    probe
//! <out>/report.json, report.txt          report
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::byol::{train_byol, ByolModel, MinMaxScaler};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::{DataSource, Method, Protocol, RunConfig};
use crate::data::{
    assert_no_leakage, generate_synthetic, parse_actigraphy_csv, preprocess, read_windows,
    write_actigraphy_csv, write_labels_csv, write_windows, Split, Task, Window,
};
use crate::error::{Error, Result};
use crate::eval::{extract_embeddings, probe_all, Encoder, MetricsReport};
use crate::nn::{Mode, Network};
use crate::simclr::{train_simclr, SimclrModel};
use crate::supervised::{score_supervised, train_supervised, SupervisedModel};

const EMBED_BATCH: usize = 256;

#[derive(Clone, Debug)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn actigraphy_csv(&self) -> PathBuf {
        self.root.join("actigraphy.csv")
    }

    pub fn labels_csv(&self) -> PathBuf {
        self.root.join("labels.csv")
    }

    pub fn windows(&self) -> PathBuf {
        self.root.join("windows.actw")
    }

    pub fn preprocess_report(&self) -> PathBuf {
        self.root.join("preprocess.json")
    }

    pub fn method_dir(&self, method: Method) -> PathBuf {
        self.root.join(method.name())
    }

    pub fn run_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.method_dir(method).join(format!("seed-{seed}"))
    }

    pub fn checkpoint(&self, method: Method, seed: u64, task: Option<Task>) -> PathBuf {
        let dir = self.run_dir(method, seed);
        match task {
            Some(t) => dir.join(format!("model-{}.ckpt", t.name())),
            None => dir.join("model.ckpt"),
        }
    }

    pub fn loss_history(&self, method: Method, seed: u64) -> PathBuf {
        self.run_dir(method, seed).join("loss_history.csv")
    }

    pub fn metrics_json(&self, method: Method, seed: u64) -> PathBuf {
        self.run_dir(method, seed).join("metrics.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require(path: PathBuf, what: &'static str, hint: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { what, path, hint })
    }
}

fn write_config(path: &Path, config: &RunConfig) -> Result<()> {
    write_file(path, config.to_toml().as_bytes())
}

/// Synthetic cohort to `actigraphy.csv` and `labels.csv`.
pub fn generate(config: &RunConfig) -> Result<usize> {
    config.validate()?;
    let c = config.resolved();
    let out = Artifacts::new(&c.output_dir);
    create_dir(&out.root)?;
    let records = generate_synthetic(&c.data.synthetic)?;
    write_actigraphy_csv(&records, &out.actigraphy_csv())?;
    write_labels_csv(&records, &out.labels_csv())?;
    write_config(&out.config(), &c)?;
    Ok(records.len())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub participants: usize,
    pub windows: usize,
    pub windows_per_split: [usize; 3],
    pub missing_cells: usize,
    pub imputed_cells: usize,
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

/// Records to the window container.
pub fn preprocess_stage(config: &RunConfig) -> Result<PreprocessSummary> {
    config.validate()?;
    let c = config.resolved();
    let out = Artifacts::new(&c.output_dir);
    let (actigraphy, labels) = match c.data.source {
        DataSource::Synthetic => (
            require(out.actigraphy_csv(), "synthetic actigraphy", "generate")?,
            require(out.labels_csv(), "synthetic labels", "generate")?,
        ),
        DataSource::Csv => (
            c.data.actigraphy_csv.clone().expect("validated"),
            c.data.labels_csv.clone().expect("validated"),
        ),
    };
    let parsed = parse_actigraphy_csv(&actigraphy, &labels)?;
    let pre = preprocess(&parsed.records, &c.preprocess)?;
    assert_no_leakage(&pre.windows)?;
    write_windows(&out.windows(), &pre.windows, &pre.normalization)?;
    let count = |s: Split| pre.windows.iter().filter(|w| w.split == s).count();
    let mut warnings = parsed.warnings;
    warnings.extend(pre.report.warnings.iter().cloned());
    let summary = PreprocessSummary {
        participants: parsed.records.len() - pre.report.excluded.len(),
        windows: pre.windows.len(),
        windows_per_split: [count(Split::Train), count(Split::Val), count(Split::Test)],
        missing_cells: parsed.missing_cells,
        imputed_cells: pre.report.imputed_cells,
        excluded: pre.report.excluded.clone(),
        warnings,
    };
    write_file(
        &out.preprocess_report(),
        (serde_json::to_string_pretty(&summary).expect("serializes") + "\n").as_bytes(),
    )?;
    write_config(&out.config(), &c)?;
    Ok(summary)
}

fn load_windows(out: &Artifacts) -> Result<Vec<Window>> {
    let (windows, _) = read_windows(&require(out.windows(), "window container", "preprocess")?)?;
    assert_no_leakage(&windows)?;
    Ok(windows)
}

fn train_split(windows: &[Window]) -> Vec<Window> {
    windows
        .iter()
        .filter(|w| w.split == Split::Train)
        .cloned()
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: String,
    pub seed: u64,
    pub task: Option<Task>,
    pub epoch_losses: Vec<f64>,
    pub autoencoder_losses: Vec<f64>,
    pub scaler: Option<MinMaxScaler>,
}

fn loss_csv(meta: &RunMeta) -> String {
    let mut s = String::from("stage,epoch,loss\n");
    for (i, l) in meta.autoencoder_losses.iter().enumerate() {
        s.push_str(&format!("autoencoder,{i},{l}\n"));
    }
    let stage = meta.task.map_or(meta.method.as_str(), |t| t.name());
    for (i, l) in meta.epoch_losses.iter().enumerate() {
        s.push_str(&format!("{stage},{i},{l}\n"));
    }
    s
}

/// Outcome of one pretraining run.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub seed: u64,
    pub checkpoints: Vec<PathBuf>,
    pub epoch_losses: Vec<Vec<f64>>,
}

/// Pretrains the configured method for every seed the protocol needs.
pub fn pretrain(config: &RunConfig) -> Result<Vec<PretrainOutcome>> {
    config.validate()?;
    let c = config.resolved();
    let out = Artifacts::new(&c.output_dir);
    let windows = load_windows(&out)?;
    let train = train_split(&windows);
    write_config(&out.method_dir(c.method).join("config.toml"), &c)?;
    let mut outcomes = Vec::new();
    for seed in c.pretrain_seeds() {
        create_dir(&out.run_dir(c.method, seed))?;
        let mut outcome = PretrainOutcome {
            seed,
            checkpoints: Vec::new(),
            epoch_losses: Vec::new(),
        };
        let mut history = String::new();
        let mut save = |ckpt: Checkpoint, path: PathBuf, meta: &RunMeta| -> Result<()> {
            ckpt.with_meta(meta)?.save(&path)?;
            let csv = loss_csv(meta);
            history.push_str(if history.is_empty() {
                &csv
            } else {
                csv.split_once('\n').map_or("", |x| x.1)
            });
            outcome.checkpoints.push(path);
            outcome.epoch_losses.push(meta.epoch_losses.clone());
            Ok(())
        };
        match c.method {
            Method::Simclr => {
                let run = train_simclr(&train, &c.simclr, seed)?;
                let steps = run.epoch_losses.len() as u64;
                let meta = RunMeta {
                    method: c.method.name().into(),
                    seed,
                    epoch_losses: run.epoch_losses,
                    ..Default::default()
                };
                let ckpt = Checkpoint::new(CheckpointKind::Simclr, seed, steps)
                    .with_network("encoder", &run.model.encoder)
                    .with_network("head", &run.model.head);
                save(ckpt, out.checkpoint(c.method, seed, None), &meta)?;
            }
            Method::Byol => {
                let run = train_byol(&train, &c.byol, seed)?;
                let m = &run.model;
                let meta = RunMeta {
                    method: c.method.name().into(),
                    seed,
                    epoch_losses: run.epoch_losses.clone(),
                    autoencoder_losses: run.autoencoder_losses.clone(),
                    scaler: Some(m.scaler.clone()),
                    ..Default::default()
                };
                let ckpt =
                    Checkpoint::new(CheckpointKind::Byol, seed, run.epoch_losses.len() as u64)
                        .with_network("encoder", &m.encoder)
                        .with_network("projector", &m.projector)
                        .with_network("predictor", &m.predictor)
                        .with_network("target_encoder", &m.target_encoder)
                        .with_network("target_projector", &m.target_projector);
                save(ckpt, out.checkpoint(c.method, seed, None), &meta)?;
            }
            Method::SupervisedBaseline => {
                for task in c.task_list()? {
                    let run = train_supervised(&windows, task, &c.supervised, seed)?;
                    let meta = RunMeta {
                        method: c.method.name().into(),
                        seed,
                        task: Some(task),
                        epoch_losses: run.epoch_losses.clone(),
                        ..Default::default()
                    };
                    let ckpt = Checkpoint::new(
                        CheckpointKind::Supervised,
                        seed,
                        run.epoch_losses.len() as u64,
                    )
                    .with_network("encoder", &run.model.encoder)
                    .with_network("head", &run.model.head);
                    save(ckpt, out.checkpoint(c.method, seed, Some(task)), &meta)?;
                }
            }
            Method::RandomEncoder => {
                let mut model = SimclrModel::new(&c.simclr.architecture, seed)?;
                model.set_mode(Mode::Inference);
                let meta = RunMeta {
                    method: c.method.name().into(),
                    seed,
                    ..Default::default()
                };
                let ckpt = Checkpoint::new(CheckpointKind::RandomEncoder, seed, 0)
                    .with_network("encoder", &model.encoder);
                save(ckpt, out.checkpoint(c.method, seed, None), &meta)?;
            }
        }
        write_file(&out.loss_history(c.method, seed), history.as_bytes())?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

fn load_checkpoint(path: PathBuf) -> Result<Checkpoint> {
    Checkpoint::load(&require(path, "checkpoint", "pretrain")?)
}

fn inference(net: &Network) -> Network {
    let mut n = net.clone();
    n.set_mode(Mode::Inference);
    n
}

/// Restores the frozen encoder used for probing from a checkpoint.
pub fn load_encoder(method: Method, ckpt: &Checkpoint) -> Result<Box<dyn Encoder>> {
    match method {
        Method::Simclr | Method::RandomEncoder => {
            ckpt.expect_kind(if method == Method::Simclr {
                CheckpointKind::Simclr
            } else {
                CheckpointKind::RandomEncoder
            })?;
            Ok(Box::new(inference(ckpt.network("encoder")?)))
        }
        Method::Byol => {
            ckpt.expect_kind(CheckpointKind::Byol)?;
            let meta: RunMeta = ckpt.meta()?;
            let scaler = meta.scaler.ok_or_else(|| Error::Format {
                what: "checkpoint",
                message: "BYOL checkpoint lacks its input rescaling".into(),
            })?;
            let model = ByolModel {
                scaler,
                encoder: inference(ckpt.network("encoder")?),
                projector: inference(ckpt.network("projector")?),
                predictor: inference(ckpt.network("predictor")?),
                target_encoder: inference(ckpt.network("target_encoder")?),
                target_projector: inference(ckpt.network("target_projector")?),
            };
            Ok(Box::new(model))
        }
        Method::SupervisedBaseline => Err(Error::config(
            "method",
            "the supervised baseline is scored by its own head, not probed",
        )),
    }
}

fn pretrained_seed(c: &RunConfig, seed: u64) -> u64 {
    match c.protocol {
        Protocol::Full => seed,
        Protocol::ProbeOnly => c.seeds[0],
    }
}

/// Scores every seed and writes one metrics file per seed; returns the
/// combined report for this method.
pub fn probe(config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    let mut c = config.resolved();
    if c.protocol == Protocol::ProbeOnly {
        c.probe.random_init = true;
    }
    let out = Artifacts::new(&c.output_dir);
    let tasks = c.task_list()?;
    let windows = load_windows(&out)?;
    // Locate every checkpoint before doing any work.
    for &seed in &c.seeds {
        let s = pretrained_seed(&c, seed);
        if c.method == Method::SupervisedBaseline {
            for &t in &tasks {
                require(
                    out.checkpoint(c.method, s, Some(t)),
                    "checkpoint",
                    "pretrain",
                )?;
            }
        } else {
            require(out.checkpoint(c.method, s, None), "checkpoint", "pretrain")?;
        }
    }
    write_config(&out.method_dir(c.method).join("config.toml"), &c)?;
    let mut combined = MetricsReport::new();
    for &seed in &c.seeds {
        let s = pretrained_seed(&c, seed);
        let mut report = MetricsReport::new();
        if c.method == Method::SupervisedBaseline {
            for &task in &tasks {
                let ckpt = load_checkpoint(out.checkpoint(c.method, s, Some(task)))?;
                ckpt.expect_kind(CheckpointKind::Supervised)?;
                let model = SupervisedModel {
                    task,
                    encoder: inference(ckpt.network("encoder")?),
                    head: inference(ckpt.network("head")?),
                };
                report.add_run(
                    c.method.name(),
                    task,
                    score_supervised(&model, &windows, seed)?,
                );
            }
        } else {
            let ckpt = load_checkpoint(out.checkpoint(c.method, s, None))?;
            let encoder = load_encoder(c.method, &ckpt)?;
            let set = extract_embeddings(encoder.as_ref(), &windows, EMBED_BATCH)?;
            for (task, score) in probe_all(&set, &tasks, &c.probe, seed)? {
                report.add_run(c.method.name(), task, score);
            }
        }
        let dir = out.run_dir(c.method, seed);
        write_file(
            &out.metrics_json(c.method, seed),
            report.to_json().as_bytes(),
        )?;
        write_file(&dir.join("metrics.txt"), report.table().as_bytes())?;
        combined.merge(&report);
    }
    Ok(combined)
}

/// Merges every `metrics.json` under the output directory into the report table.
pub fn report(config: &RunConfig) -> Result<MetricsReport> {
    config.validate()?;
    let c = config.resolved();
    let out = Artifacts::new(&c.output_dir);
    let mut merged = MetricsReport::new();
    let mut found = 0;
    for method in Method::ALL {
        let dir = out.method_dir(method);
        let Ok(entries) = fs::read_dir(&dir) else {
            continue;
        };
        let mut runs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join("metrics.json")))
            .filter(|p| p.exists())
            .collect();
        runs.sort();
        for path in runs {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            merged.merge(&MetricsReport::from_json(&text)?);
            found += 1;
        }
    }
    if found == 0 {
        return Err(Error::MissingArtifact {
            what: "probe metrics",
            path: out.root.join("<method>/seed-<s>/metrics.json"),
            hint: "probe",
        });
    }
    write_file(&out.report_json(), merged.to_json().as_bytes())?;
    write_file(&out.report_txt(), merged.table().as_bytes())?;
    Ok(merged)
}
