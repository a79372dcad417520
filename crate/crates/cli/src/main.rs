//! `riskmpc`: benchmark, training and closed-loop experiment commands.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or input,
//! 3 numerical failure, 4 a result missed its threshold.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riskmpc::error::Error;
use riskmpc::sim::Mode;

#[derive(Parser)]
#[command(name = "riskmpc", version, about = "Risk-aware registration and control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Guard,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Guard => Mode::Guard,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-kernel versus adaptive-kernel registration over all shapes.
    BenchIcp {
        #[command(flatten)]
        common: Common,
    },
    /// Labeled feature vectors from seeded perturbation injections.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Trains the concept classifier and reports held-out quality.
    TrainGpc {
        #[command(flatten)]
        common: Common,
        /// Dataset to train on; defaults to `<out>/dataset.jsonl`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// One closed-loop episode.
    RunSim {
        #[command(flatten)]
        common: Common,
        /// Overrides the mode from the configuration.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Trained model, required in guard mode when an obstacle is present.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Summarizes and compares episode logs.
    Report {
        /// Episode JSON-lines files.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Prints the effective configuration as JSON.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Threshold(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::Io(_)) => 1,
            Failure::Core(Error::InvalidArgument(_) | Error::Parse(_) | Error::Json(_)) => 2,
            Failure::Core(_) => 3,
            Failure::Threshold(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Threshold(m) => write!(f, "threshold missed: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BenchIcp { common } => commands::bench_icp(&common),
        Command::GenData { common } => commands::gen_data(&common),
        Command::TrainGpc { common, data } => commands::train_gpc(&common, data),
        Command::RunSim { common, mode, model } => commands::run_sim(&common, mode.map(Mode::from), model),
        Command::Report { logs, out } => report::run(&logs, &out),
        Command::ShowConfig { common } => commands::show_config(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
