mod estimate;
mod experiment;
mod inspect;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gradchain_core::UnobservedPolicy;

#[derive(Parser, Debug)]
#[command(name = "gradchain", version, about = "Graduation-rate estimation with absorbing Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a graduation rate from term records or yearly trajectories.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Run an experiment once per axis value and tabulate the results.
    Sweep(SweepArgs),
    /// Print fundamental-matrix quantities and yearly absorption for a chain.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorKind {
    Sygr,
    RollingSygr,
    Amc,
    MlAmc,
    RumlAmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Unobserved {
    Error,
    SelfLoop,
    BorrowLower,
}

impl From<Unobserved> for UnobservedPolicy {
    fn from(u: Unobserved) -> Self {
        match u {
            Unobserved::Error => UnobservedPolicy::Error,
            Unobserved::SelfLoop => UnobservedPolicy::SelfLoop,
            Unobserved::BorrowLower => UnobservedPolicy::BorrowLowerSubState,
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// CSV of term records or yearly trajectories (detected from the header).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    estimator: EstimatorKind,
    /// Duration sub-states per level for ml-amc and ruml-amc.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..))]
    levels: u8,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    horizon: u32,
    /// Entry cohorts pooled by rolling-sygr (the earliest ones).
    #[arg(long, default_value_t = 2)]
    cohorts: usize,
    /// Entry year of the cohort sygr reports (default: the earliest).
    #[arg(long)]
    cohort: Option<i32>,
    /// How fitted chains treat expanded states with no observations.
    #[arg(long, value_enum, default_value_t = Unobserved::Error)]
    unobserved: Unobserved,
    /// Last observed term for term records, as YEAR-TERM (default: latest in the data).
    #[arg(long)]
    observation_end: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed for every replication stream; overrides any seed in the config.
    #[arg(long)]
    seed: u64,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Cohort sizes to sweep over.
    #[arg(long, value_delimiter = ',', conflicts_with = "levels", required_unless_present = "levels")]
    cohort_sizes: Vec<usize>,
    /// Sub-state counts applied to every ml-amc and ruml-amc estimator.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..))]
    levels: Vec<u8>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Chain document (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    matrix: Option<PathBuf>,
    /// A bundled chain instead of a file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    horizon: u32,
    /// Text output by default.
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRADCHAIN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => estimate::run(&a),
        Command::Simulate(a) => experiment::simulate(&a),
        Command::Sweep(a) => experiment::sweep(&a),
        Command::Inspect(a) => inspect::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
