//! `oscloop`: simulate and analyse the saturation feedback oscillator from
//! experiment files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oscloop_core::ErrorClass;

use config::{CommandName, ExperimentConfig, Format, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] oscloop_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Simulation => 3,
                ErrorClass::Analytic => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "oscloop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; analyses also print their report to stdout.
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    kplus: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    kminus: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Lag cascade order (replaces an integrator from the file).
    #[arg(long, global = true)]
    n: Option<u32>,
    /// Use an integrator as the linear block.
    #[arg(long, global = true)]
    integrator: bool,
    /// Print the resolved experiment file and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Simulate the loop, write the trace and print waveform features.
    Simulate,
    /// Closed-form relaxation (or integrator) period.
    Period,
    /// Oscillation existence conditions for the first-order loop.
    Existence,
    /// Root-locus crossings and branch samples of the lag cascade.
    Rlocus,
    /// Describing-function harmonic balance.
    Hbalance,
    /// Minimum negative-feedback gain over a range of K+.
    Boundary,
    /// Amplitude/frequency profile over a swept parameter.
    Sweep,
    /// Simulated oscillation map over (K+, K-).
    Bifurcation,
}

impl From<Cmd> for CommandName {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => CommandName::Simulate,
            Cmd::Period => CommandName::Period,
            Cmd::Existence => CommandName::Existence,
            Cmd::Rlocus => CommandName::Rlocus,
            Cmd::Hbalance => CommandName::Hbalance,
            Cmd::Boundary => CommandName::Boundary,
            Cmd::Sweep => CommandName::Sweep,
            Cmd::Bifurcation => CommandName::Bifurcation,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        a: cli.a,
        b: cli.b,
        k_plus: cli.kplus,
        k_minus: cli.kminus,
        alpha: cli.alpha,
        n: cli.n,
        integrator: cli.integrator,
        out: cli.out,
        format: cli.format,
    };
    let config = file.resolve(cli.command.into(), &overrides)?;
    config.loop_config()?;
    if cli.print_config {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    commands::run(&config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match &e {
                CliError::Core(inner) => format!(" [{}]", inner.code()),
                _ => String::new(),
            };
            eprintln!("error{code}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
