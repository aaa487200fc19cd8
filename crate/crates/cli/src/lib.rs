//! Command-line front end: argument definitions and command bodies.
//!
//! Commands write human-readable summaries to the given writer and their
//! artefacts (CSV, checkpoints) to disk. [`exit_code`] maps library errors to
//! process exit codes.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fourier_circuits::Error;

/// Exit code for a failed verification or a diverged run.
pub const EXIT_FAIL: i32 = 1;
/// Exit code for bad arguments, configuration or input files.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fourier-circuits", version, about = "Construct, train and analyse Fourier-circuit networks for modular addition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the analytic max-margin network and check it.
    Construct(ConstructArgs),
    /// Train a model from a configuration file.
    Train(TrainArgs),
    /// Spectral analysis of a checkpoint.
    Analyze(AnalyzeArgs),
    /// Run the analytic verification battery for one (p, k).
    Verify(VerifyArgs),
    /// Run the grokking protocol over several seeds.
    Grok(GrokArgs),
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub k: usize,
    /// Rescale to unit L_{2,k+1} norm.
    #[arg(long)]
    pub normalize: bool,
    /// Checkpoint destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override `run.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub k: usize,
    /// Test hook: multiply the reference γ* by this factor.
    #[arg(long, hide = true)]
    pub tamper_gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GrokArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override `run.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
}

/// Whether a command's checks passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => EXIT_FAIL,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => EXIT_FAIL,
        _ => EXIT_USAGE,
    }
}

pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> fourier_circuits::Result<Status> {
    match &cli.command {
        Command::Construct(a) => commands::construct(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Analyze(a) => commands::analyze(a, out),
        Command::Verify(a) => commands::verify(a, out),
        Command::Grok(a) => commands::grok(a, out),
    }
}
