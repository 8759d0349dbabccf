//! `dsiv`: generate synthetic panels, train, evaluate, sweep loss weights and
//! pick treatment plans from a JSON run config.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "dsiv",
    version,
    about = "Sequential treatment-effect estimation under unmeasured confounding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory written by `gen`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Checkpoint written by `train`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Print only the final result line.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write train/val/test panels and metadata (plus the oracle table for decision data).
    Gen,
    /// Fit a model on `--data` and write a checkpoint and training report.
    Train,
    /// One-step test MSE of `--checkpoint`, or a fresh multi-seed run without one.
    Eval,
    /// Multi-seed test MSE over the alpha/beta grid.
    Sweep,
    /// Best plan per test unit from `--checkpoint`, with oracle regret when available.
    Decide,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = file.resolve(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        quiet: cli.quiet,
    })?;
    let (data, ckpt) = (cli.data.as_deref(), cli.checkpoint.as_deref());
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train => commands::train(&cfg, data),
        Command::Eval => commands::eval(&cfg, data, ckpt),
        Command::Sweep => commands::sweep_cmd(&cfg),
        Command::Decide => commands::decide(&cfg, data, ckpt),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(error::EXIT_CONFIG);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
