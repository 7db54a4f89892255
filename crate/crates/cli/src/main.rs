//! Command-line experiment runner: train, evaluate, ablate, analyze,
//! simulate, and verify.

mod commands;
mod config;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridtalk_core::diffcore::DiffError;
use gridtalk_core::trainer::TrainError;

/// Exit codes: 0 ok, 2 usage/config, 3 artifact mismatch, 4 runtime failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Artifact(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Artifact(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Artifact(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> CliError {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match &e {
            TrainError::InvalidConfig(_) | TrainError::EmptyEvaluation => {
                CliError::Config(e.to_string())
            }
            TrainError::Diff(DiffError::CheckpointMismatch(_)) => {
                CliError::Artifact(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DiffError> for CliError {
    fn from(e: DiffError) -> CliError {
        match &e {
            DiffError::CheckpointMismatch(_) | DiffError::Io(_) => {
                CliError::Artifact(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gridtalk",
    version,
    about = "Networked traffic-signal agents that learn a discrete language: training, baselines, and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method; writes checkpoints, metrics.csv, and a
    /// manifest into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate trained checkpoints (or scripted baselines): mean and
    /// standard deviation of episode rewards averaged over agents.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file or run directory; defaults to the config's
        /// output_dir. Ignored by scripted baselines.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Block one random road per evaluation episode.
        #[arg(long)]
        perturbed: bool,
        /// Argmax actions and noise-free messages.
        #[arg(long)]
        greedy: bool,
    },
    /// Matched ablation suite (full, blank, blind sets) on shared seeds;
    /// emits a comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Emergent-language analysis over recorded episode logs.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Directory of .jsonl episode logs.
        #[arg(long)]
        logs: PathBuf,
    },
    /// Roll out the configured method without training; optional text
    /// rendering of every tick.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Episode length override (rounded up to a multiple of 5).
        #[arg(long)]
        ticks: Option<usize>,
        /// Print the lane renderer after every tick.
        #[arg(long)]
        render: bool,
        /// Checkpoint to load for learned methods (fresh parameters
        /// otherwise).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Audit config-digest consistency across an output directory.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config } => commands::train::run(&config),
        Command::Eval {
            config,
            checkpoint,
            perturbed,
            greedy,
        } => commands::eval::run(&config, checkpoint.as_deref(), perturbed, greedy),
        Command::Ablate { config } => commands::ablate::run(&config),
        Command::Analyze { config, logs } => commands::analyze::run(&config, &logs),
        Command::Simulate {
            config,
            ticks,
            render,
            checkpoint,
        } => commands::simulate::run(&config, ticks, render, checkpoint.as_deref()),
        Command::Verify { dir } => commands::verify::run(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
