//! Command-line front end: a TOML run config and one subcommand per stage.

pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use halprobe::search::Strategy;

use config::{Overrides, RunConfig};
use pipeline::{Pipeline, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "halprobe",
    version,
    about = "Hallucination-probe benchmark pipeline"
)]
pub struct Cli {
    /// Run config (TOML).
    #[arg(short, long, global = true, default_value = "halprobe.toml")]
    pub config: PathBuf,
    /// Output directory; replaces `output_dir` from the config.
    #[arg(long, global = true)]
    pub stage_out: Option<PathBuf>,
    /// Run a single strategy instead of the configured list.
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Fraction of the negative space searched, in (0, 1].
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Answer with the simulated model instead of the configured endpoint.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Use only reviewed description candidates.
    #[arg(long, global = true)]
    pub verified_only: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Load and filter the corpus.
    Ingest,
    /// Build the co-occurrence table.
    Stats,
    /// Search distractors for every configured strategy.
    Search,
    /// Write the list of texts and images an encoder must embed.
    ExportManifest,
    /// Turn distractor sets into QA items.
    GenQa,
    /// Collect model answers.
    Evaluate,
    /// Parse answers and compute metrics.
    Score,
    /// Render the metrics tables.
    Report,
    /// Every stage in order.
    RunAll,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            stage_out: self.stage_out.clone(),
            strategy: self.strategy,
            gamma: self.gamma,
            seed: self.seed,
            mock: self.mock,
            verified_only: self.verified_only,
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let loaded = RunConfig::load(&cli.config, &cli.overrides())?;
    let p = Pipeline::new(loaded.config, loaded.digest);
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Stats => Stage::Stats,
        Command::Search => Stage::Search,
        Command::ExportManifest => Stage::ExportManifest,
        Command::GenQa => Stage::GenQa,
        Command::Evaluate => Stage::Evaluate,
        Command::Score => Stage::Score,
        Command::Report => Stage::Report,
        Command::RunAll => return p.run_all(),
    };
    p.run(stage)
}
