//! `ppa`: calibrate, backtest, forecast and value PPAs from the command line.
//!
//! Exit codes: 0 success, 2 data or configuration error, 3 solver failure
//! (or a failed self-test), 64 usage error.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppa_core::error::CoreError;

pub const EXIT_DATA: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "ppa",
    version,
    about = "Structural electricity price model and PPA valuation"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build features and fit the inverse model to observed dispatch.
    Calibrate(CalibrateArgs),
    /// Replay a dataset with a model and report NMAE.
    Backtest(BacktestArgs),
    /// Predict costs and dispatch a scenario; writes prices and dispatch.
    Forecast(ForecastArgs),
    /// Capture, indifference and break-even prices of a PPA.
    Value(ValueArgs),
    /// Capture price over the 13-point multiplier grid of one factor.
    Sensitivity(SensitivityArgs),
    /// CMA-ES search over log penalties, scored on held-out hours.
    Tune(TuneArgs),
    /// Property checks of the QP solver and dispatch model.
    Selftest(SelftestArgs),
    /// Write a synthetic dataset, scenario and PPA.
    Synth(SynthArgs),
    /// Run the three-scenario case study from a config file.
    CaseStudy(CaseStudyArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Dataset directory with system.json and hourly.csv.
    #[arg(long)]
    data: PathBuf,
    /// Calibration config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Gap handling for the hourly data.
    #[arg(long, value_enum, default_value_t = Gaps::Fail)]
    fill: Gaps,
    /// Leave the fitted training series out of the model file.
    #[arg(long)]
    no_fitted: bool,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Weights::Base)]
    weights: Weights,
    #[arg(long)]
    out: PathBuf,
    /// Dispatch window in hours.
    #[arg(long, default_value_t = 168)]
    window: usize,
    #[arg(long, value_enum, default_value_t = Gaps::Fail)]
    fill: Gaps,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for prices.csv, dispatch.csv and friends.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValueArgs {
    /// CSV with `timestamp,price` columns.
    #[arg(long)]
    prices: PathBuf,
    /// PPA contract (JSON).
    #[arg(long)]
    ppa: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    #[arg(long)]
    model: PathBuf,
    /// Base scenario (JSON).
    #[arg(long)]
    base: PathBuf,
    /// gas_price, coal_price, carbon_price, demand, wind_output or solar_output.
    #[arg(long)]
    factor: String,
    #[arg(long)]
    ppa: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Objective evaluations (one calibration each).
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base calibration config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Share of hours used for training; the rest validates.
    #[arg(long, default_value_t = 0.75)]
    train_share: f64,
    #[arg(long, default_value_t = 168)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Gaps::Fail)]
    fill: Gaps,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per property.
    #[arg(long, default_value_t = 200)]
    cases: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthSystem::SpainLike)]
    system: SynthSystem,
    #[arg(long, default_value_t = 14)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dispatch window of the generator.
    #[arg(long, default_value_t = 168)]
    window: usize,
    /// Fixed price of the written PPA.
    #[arg(long, default_value_t = 60.0)]
    ppa_price: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CaseStudyArgs {
    /// Case study file (JSON); the built-in Spain-like setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weights {
    Base,
    Solar,
    Wind,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Gaps {
    Fail,
    ForwardFill,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthSystem {
    SpainLike,
    ThreeTech,
}

fn exit_code(e: &CoreError) -> u8 {
    if e.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_SOLVER
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
