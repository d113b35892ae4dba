//! `ecm`: simulate space-time counts, fit movement parameters, bootstrap
//! confidence intervals, run replicated studies and estimate vote transfers.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 on numerical failure.

mod bootstrap;
mod config;
mod fit;
mod study;
mod tables;
mod simulate;
mod vote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ecm::Error> for CliError {
    fn from(e: ecm::Error) -> Self {
        match e {
            ecm::Error::FitFailed(_) | ecm::Error::PlacementFailed { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "ecm", version, about = "Evolving-categories multinomial models: simulation, fitting and vote transfers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set size.known=1000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate count arrangements over a survey design.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of arrangements to write; overrides `replicates`.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Fit a movement family to a counts file.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Parametric bootstrap of a previous fit.
    Bootstrap {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Estimate a two-round vote-transfer matrix from district counts.
    VoteTransfer {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Replicated simulate-and-fit study over sizes and estimators.
    Study {
        #[command(flatten)]
        config: ConfigArgs,
        /// Replicates per setting; overrides `replicates`.
        #[arg(long)]
        replicates: Option<usize>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Keep replicates already present in the results file.
        #[arg(long)]
        resume: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, replicates } => {
            let mut cfg: config::SimulateConfig = config::load(config.config.as_deref(), &config.set)?;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            simulate::run(&cfg)
        }
        Command::Fit { config } => fit::run(&config::load(config.config.as_deref(), &config.set)?),
        Command::Bootstrap { config } => bootstrap::run(&config::load(config.config.as_deref(), &config.set)?),
        Command::VoteTransfer { config } => vote::run(&config::load(config.config.as_deref(), &config.set)?),
        Command::Study {
            config,
            replicates,
            jobs,
            resume,
        } => {
            let mut cfg: config::StudyConfig = config::load(config.config.as_deref(), &config.set)?;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            study::run(&cfg, jobs, resume)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
