//! Experiment runner behind the `ipdd` binary.
//!
//! Verbs: `run` (per-chunk metrics, drift events and a summary), `compare`
//! (seed-averaged table per method and architecture), `theory` (bound and
//! recurrence sweep) and `gen` (dataset export). Exit codes are 0 on
//! success, 1 on runtime failure and 2 on configuration errors.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::Experiment;
use config::RawConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<ipdd_core::Error> for CliError {
    fn from(e: ipdd_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ipdd", version, about = "Drift detection with integrally private model ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Run every configured method and write per-chunk metrics, drift events and a summary.
    Run(Common),
    /// Run every configured method and write a seed-averaged comparison table.
    Compare(Common),
    /// Sweep the recurrence bounds against Monte Carlo frequencies.
    Theory(Common),
    /// Export the configured dataset as CSV.
    Gen(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated seeds; replaces the `seeds` key.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Also write SVG charts.
    #[arg(long)]
    pub svg: bool,
}

impl Common {
    pub fn experiment(&self) -> Result<Experiment, CliError> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        for o in &self.overrides {
            raw.set_override(o)?;
        }
        if let Some(s) = &self.seeds {
            raw.set("seeds", s, config::Origin::Override)?;
        }
        let cfg = raw.resolve()?;
        Ok(Experiment {
            raw,
            cfg,
            out: self.out.clone(),
            svg: self.svg,
        })
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.verb {
        Verb::Run(c) => commands::cmd_run(&c.experiment()?).map(drop),
        Verb::Compare(c) => commands::cmd_compare(&c.experiment()?).map(drop),
        Verb::Theory(c) => commands::cmd_theory(&c.experiment()?).map(drop),
        Verb::Gen(c) => commands::cmd_gen(&c.experiment()?).map(drop),
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ipdd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
