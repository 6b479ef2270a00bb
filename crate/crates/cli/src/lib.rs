//! Command-line front end: experiment configuration, manifests and the
//! generate, analyze, train, eval, complexity, embed and sweep commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "csi-mtl", version, about = "Multi-region CSI feedback experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Accepted for scripts; every run is already deterministic.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Route s2m samples by their true task instead of the GateNet (eval).
    #[arg(long, global = true)]
    pub oracle_labels: bool,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Synthesize the cell and write the datasets.
    Generate,
    /// Power profiles, coverage intervals and correlation matrices.
    Analyze,
    /// Train every configured mode.
    Train,
    /// Evaluate trained modes on the test splits.
    Eval,
    /// Parameter and FLOP tables.
    Complexity,
    /// PCA of the feedback codes.
    Embed,
    /// Pooled-model NMSE against region diameter.
    Sweep,
    /// Print the default configuration.
    Defaults,
}

/// Resolves the configuration with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command and returns what to print.
pub fn run(cli: &Cli) -> Result<String> {
    if cli.command == Command::Defaults {
        return Ok(ExperimentConfig::default().to_toml());
    }
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Analyze => commands::analyze(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg, cli.oracle_labels).map(|r| r.table()),
        Command::Complexity => commands::complexity(&cfg),
        Command::Embed => commands::embed(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Defaults => unreachable!(),
    }
}
