//! `actissl` command line: generate → preprocess → pretrain → probe → report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::PathBuf;

use actissl_core::config::{parse_seed_range, Method, Protocol, RunConfig};
use actissl_core::pipeline;
use actissl_core::{Error, Result};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "actissl",
    version,
    about = "Self-supervised pretraining and linear probing for actigraphy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// simclr, byol, supervised-baseline or random-encoder.
    #[arg(long, global = true, value_name = "NAME")]
    pub method: Option<String>,

    #[arg(long, global = true, value_name = "N", conflicts_with = "seeds")]
    pub seed: Option<u64>,

    /// `N..M` (exclusive), `N..=M` or a single seed.
    #[arg(long, global = true, value_name = "N..M")]
    pub seeds: Option<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Comma-separated task names, or `all`.
    #[arg(long, global = true, value_name = "LIST")]
    pub tasks: Option<String>,

    /// full or probe-only.
    #[arg(long, global = true, value_name = "NAME")]
    pub protocol: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort as actigraphy and label CSVs.
    Generate,
    /// Clean, split, normalize and window the cohort.
    Preprocess,
    /// Train the configured method and save checkpoints.
    Pretrain,
    /// Fit linear probes on frozen embeddings and score them.
    Probe,
    /// Aggregate every probed run into the results table.
    Report,
}

impl Cli {
    /// Configuration file (or defaults) with command-line overrides applied.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.method {
            config.method = m.parse::<Method>()?;
        }
        if let Some(s) = self.seed {
            config.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            config.seeds = parse_seed_range(s)?;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(t) = &self.tasks {
            config.tasks = t.split(',').map(|s| s.trim().to_string()).collect();
        }
        if let Some(p) = &self.protocol {
            config.protocol = match p.as_str() {
                "full" => Protocol::Full,
                "probe-only" => Protocol::ProbeOnly,
                other => {
                    return Err(Error::config(
                        "protocol",
                        format!("unknown protocol {other:?} (expected full or probe-only)"),
                    ))
                }
            };
        }
        config.validate()?;
        Ok(config)
    }
}

fn execute(cli: &Cli) -> Result<String> {
    let config = cli.run_config()?;
    let out = config.output_dir.display().to_string();
    Ok(match cli.command {
        Command::Generate => {
            let n = pipeline::generate(&config)?;
            format!("generated {n} participants in {out}")
        }
        Command::Preprocess => {
            let s = pipeline::preprocess_stage(&config)?;
            let [tr, va, te] = s.windows_per_split;
            format!(
                "{} windows from {} participants (train {tr}, val {va}, test {te}); {} excluded",
                s.windows,
                s.participants,
                s.excluded.len()
            )
        }
        Command::Pretrain => {
            let runs = pipeline::pretrain(&config)?;
            let mut lines = Vec::new();
            for run in &runs {
                for (path, losses) in run.checkpoints.iter().zip(&run.epoch_losses) {
                    let loss = match (losses.first(), losses.last()) {
                        (Some(a), Some(b)) => format!("loss {a:.4} -> {b:.4}"),
                        _ => "untrained".into(),
                    };
                    lines.push(format!("seed {}: {} ({loss})", run.seed, path.display()));
                }
            }
            lines.join("\n")
        }
        Command::Probe => pipeline::probe(&config)?.table(),
        Command::Report => pipeline::report(&config)?.table(),
    })
}

/// Parses `args` (program name first) and runs one subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            println!("{}", text.trim_end());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
