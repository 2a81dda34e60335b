//! `popsim`: batch driver for the agent-based, SMM, PDMM and SEIRD simulators.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or input files,
//! 2 for failures during a run.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or input file.
    Schema(String),
    /// Error raised while simulating or writing results.
    Runtime(String),
}

impl From<popsim::Error> for Failure {
    fn from(e: popsim::Error) -> Self {
        match e {
            popsim::Error::Config(msg) => Self::Schema(msg),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "popsim", version, about = "Multiscale population-dynamics simulations")]
struct Cli {
    /// Worker threads for replica batches (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            replicas: self.replicas,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a batch of replicas and write trajectories and summaries.
    Simulate(RunArgs),
    /// Estimate the metapopulation model of an agent-based configuration.
    Project(RunArgs),
    /// Compare critical-time distributions of two or more batch.json files.
    Compare {
        #[arg(required = true, num_args = 2..)]
        batches: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
    /// Time runs over a range of population sizes.
    Benchmark(RunArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a.config, &a.overrides()),
        Command::Project(a) => commands::project(&a.config, &a.overrides()),
        Command::Compare { batches, out, bins } => commands::compare(&batches, &out, bins),
        Command::Benchmark(a) => commands::benchmark(&a.config, &a.overrides()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
