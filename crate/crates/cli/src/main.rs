//! `lowvol`: batch front end for backtests, decile studies, factor analysis,
//! synthetic markets and the verification suite.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] lowvol_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Domain(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lowvol", version, about = "Low-volatility / low-beta strategy research engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (synthetic market and verification suite)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// low-vol, low-beta, sector-low-vol or a factor name
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Withholding tax rate on long dividends
    #[arg(long, global = true)]
    tax: Option<f64>,

    /// Override any config key, e.g. construction.estimators.lag=40
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run one strategy: pnl.csv, stats.json, diagnostics.csv
    Backtest,
    /// Volatility-decile portfolios, compounding and dividend-yield profiles
    Deciles,
    /// Build comparison factors and their correlation table
    Factors,
    /// Regress a factor's monthly P&L on others
    Residualize,
    /// Write a synthetic market in the standard CSV layout
    Simulate,
    /// Run the acceptance criteria
    Verify,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        strategy: cli.strategy.clone(),
        tax: cli.tax,
        set: cli.set.clone(),
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Backtest => commands::backtest(&cfg),
        Command::Deciles => commands::deciles(&cfg),
        Command::Factors => commands::factors(&cfg),
        Command::Residualize => commands::residualize_cmd(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Verify => commands::verify(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
