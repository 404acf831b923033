//! `ouflow` runs one experiment from a TOML config and writes a JSON
//! summary, CSV tables and a manifest of SHA-256 hashes.
//!
//! Exit status: 0 on success, 1 on configuration or I/O errors, 2 when the
//! model fails validation, 3 on numerical failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{Command, ExperimentConfig};
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "ouflow", version, about = "Experiments on isotropic Ornstein-Uhlenbeck flows")]
struct Args {
    /// Experiment to run; overrides `command` in the config file.
    #[arg(value_enum)]
    command: Option<Command>,

    /// TOML config file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory; overrides `out`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides `numerics.replicas`.
    #[arg(long)]
    replicas: Option<usize>,
}

fn execute(args: Args) -> Result<PathBuf, CliError> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let mut config = ExperimentConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.out = out;
    }
    if let Some(r) = args.replicas {
        config.numerics.replicas = r;
    }
    let command = args
        .command
        .or(config.command)
        .ok_or_else(|| CliError::Usage("no command given on the command line or in the config".into()))?;
    let mut echo = text.trim_end().to_string();
    echo.push_str(&format!(
        "\n[effective] command = {}, seed = {}, replicas = {}",
        command.name(),
        config.seed,
        config.numerics.replicas
    ));
    let mut out = OutputDir::create(&config.out, echo.trim_start())?;
    let outcome = commands::run(command, &config, &mut out);
    let manifest = out.finish()?;
    outcome.map(|_| manifest)
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ouflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
