//! `onion`: train, calibrate, run and measure feature-sharing cascades.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "onion", version, about = "Feature-sharing two-stage CNN cascades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jointly train both stages on the synthetic dataset.
    Train(Flags),
    /// Pick S1 thresholds that reach the target true positive rates.
    Calibrate(Flags),
    /// Run cascaded inference and report p̄, timings and MACs.
    Infer(Flags),
    /// Analytic cost report and t(p) curves for an architecture.
    Complexity(Flags),
    /// Wall-clock sweep over forced pass fractions.
    Bench(Flags),
}

/// Flags shared by every subcommand. Values given here override the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// Architecture file, or the name of a built-in template (e.g. R_W1).
    #[arg(long)]
    pub arch: Option<String>,
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Main output file; sidecars are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma list (`0,0.5,1`) or inclusive range `start:end:count`.
    #[arg(long)]
    pub p_grid: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Run S2 row by row instead of compacting the survivors.
    #[arg(long)]
    pub no_compaction: bool,
    /// monolithic, sharing or non-sharing.
    #[arg(long)]
    pub variant: Option<String>,
}

pub enum Failure {
    Config(Vec<String>),
    Runtime(String),
}

impl From<onion_core::Error> for Failure {
    fn from(e: onion_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, flags) = match &cli.command {
        Command::Train(f) => ("train", f),
        Command::Calibrate(f) => ("calibrate", f),
        Command::Infer(f) => ("infer", f),
        Command::Complexity(f) => ("complexity", f),
        Command::Bench(f) => ("bench", f),
    };
    let result = config::resolve(name, flags)
        .map_err(Failure::Config)
        .and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(errors)) => {
            eprintln!("onion {name}: invalid configuration");
            for e in errors {
                eprintln!("  - {e}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("onion {name}: {e}");
            ExitCode::from(3)
        }
    }
}
