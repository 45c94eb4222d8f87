//! Batch front-end: dataset synthesis and ingestion, index thresholding,
//! pixel classifiers, BAM-CD training and report merging.

pub mod commands;
pub mod settings;

use std::path::PathBuf;

use burnscar::Error;
use clap::{Parser, Subcommand};

pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "burnscar", version, about = "Bitemporal burnt-area mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Root seed; overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Repeat count; overrides the `repeats` key.
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest and patch files).
    Synth,
    /// Tile and clip full scenes into a dataset.
    Ingest,
    /// Fit a global threshold on a change index and score the test split.
    IndexEval,
    /// Sample pixels, fit RF or MLP and score the test split.
    MlRun,
    /// Train BAM-CD and score the best checkpoint on the test split.
    DlRun,
    /// Merge run reports into one table.
    Report {
        /// Run directories holding a `report.tsv`.
        runs: Vec<PathBuf>,
    },
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Ingest { .. }
        | Error::Format { .. }
        | Error::MissingBand { .. }
        | Error::DimensionMismatch { .. }
        | Error::InsufficientNegatives { .. }
        | Error::Sampling(_)
        | Error::Fit(_)
        | Error::Io(_)
        | Error::Csv(_) => EXIT_DATA,
        _ => EXIT_OTHER,
    }
}

/// Shared flags after config loading.
#[derive(Debug, Clone)]
pub struct Context {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
}

impl Context {
    pub fn root_seed(&self, settings: &mut Settings) -> burnscar::Result<u64> {
        let from_config = settings.get("seed", 0u64)?;
        Ok(self.seed.unwrap_or(from_config))
    }

    pub fn repeat_count(&self, settings: &mut Settings) -> burnscar::Result<usize> {
        let n = self.repeats.map_or_else(|| settings.get("repeats", 1usize), Ok)?;
        settings.take("repeats");
        if n == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(n)
    }
}

pub fn run(cli: Cli) -> burnscar::Result<()> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let ctx = Context {
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        seed: cli.seed,
        repeats: cli.repeats,
    };
    match cli.command {
        Command::Synth => commands::synth::run(settings, &ctx),
        Command::Ingest => commands::ingest::run(settings, &ctx),
        Command::IndexEval => commands::index_eval::run(settings, &ctx),
        Command::MlRun => commands::ml_run::run(settings, &ctx),
        Command::DlRun => commands::dl_run::run(settings, &ctx),
        Command::Report { runs } => commands::report::run(&runs, cli.out.as_deref()),
    }
}
