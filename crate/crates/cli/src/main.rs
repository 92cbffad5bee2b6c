//! `suffcast`: sufficient forecasting from the command line.
//!
//! Exit status: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical failure, 1 anything else (e.g. unwritable output).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use suffcast::ErrorKind;

use crate::config::ConfigError;

#[derive(Parser)]
#[command(name = "suffcast", version, about = "Sufficient forecasting with factor models and inverse-moment dimension reduction")]
#[command(after_help = "Every command also reads a flat JSON config (--config); flags override it.\n\
The output directory defaults to $SUFFCAST_OUTPUT_DIR, else ./suffcast-out.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study on the synthetic factor designs (Models I-IV).
    Simulate(SimulateArgs),
    /// Rolling out-of-sample forecast evaluation on a CSV panel.
    Forecast(ForecastArgs),
    /// Select the number of factors and the index dimension, with traces.
    Select(SelectArgs),
    /// Estimate factors and loadings and write them out.
    Factors(FactorsArgs),
}

/// Options every command shares. `config` is consumed before merging.
#[derive(Args, Serialize)]
struct CommonArgs {
    /// JSON config file; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory [env: SUFFCAST_OUTPUT_DIR].
    #[arg(long, short = 'o', value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Worker threads (default: all available).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Serialize)]
struct InputArgs {
    /// Panel CSV: a time column, one column per series, and the target.
    #[arg(long, short = 'i', value_name = "CSV")]
    input: Option<PathBuf>,
    /// Name of the target column.
    #[arg(long)]
    target: Option<String>,
    /// Column with time labels (default: first column).
    #[arg(long)]
    time_column: Option<String>,
    #[arg(long)]
    delimiter: Option<char>,
    /// Reject non-numeric cells instead of dropping the row.
    #[arg(long)]
    strict: Option<bool>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Link function: I, II, III or IV.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    p: Option<usize>,
    /// Training length.
    #[arg(long)]
    t: Option<usize>,
    /// Held-out periods for out-of-sample R^2.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods: sir, dr, tm, ens, pc, nlpc.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Factors used for estimation: an integer or "auto".
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Number of estimated directions.
    #[arg(long)]
    l: Option<usize>,
    /// Number of slices H.
    #[arg(long)]
    slices: Option<usize>,
    /// identity or pooled.
    #[arg(long)]
    variance_mode: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    redraw_loadings: Option<bool>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    direction_metrics: Option<bool>,
    #[arg(long)]
    forecast_metrics: Option<bool>,
}

#[derive(Args, Serialize)]
struct ForecastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    /// sir, dr, tm, ens, pc or nlpc.
    #[arg(long)]
    method: Option<String>,
    /// Number of factors: an integer or "auto".
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Number of indices: an integer or "auto".
    #[arg(long)]
    l: Option<String>,
    /// Number of slices H.
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Rolling window length.
    #[arg(long)]
    window: Option<usize>,
    /// Number of forecast origins (taken from the end of the sample).
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    variance_mode: Option<String>,
    #[arg(long)]
    standardize: Option<bool>,
    /// rolling_mean or full_sample.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    c_censor: Option<f64>,
    #[arg(long)]
    c_t_multiplier: Option<f64>,
    /// ic1, ic2 or ic3.
    #[arg(long)]
    penalty: Option<String>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    /// Kernel for the dimension search: sir, dr, tm or ens.
    #[arg(long)]
    method: Option<String>,
    /// Factors used for the kernel: an integer or "auto" (the selected K).
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    variance_mode: Option<String>,
    #[arg(long)]
    standardize: Option<bool>,
    #[arg(long)]
    c_censor: Option<f64>,
    #[arg(long)]
    c_t_multiplier: Option<f64>,
}

#[derive(Args, Serialize)]
struct FactorsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    /// Number of factors: an integer or "auto".
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    standardize: Option<bool>,
}

fn flags<T: Serialize>(args: &T) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::to_value(args)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(config::resolve(a.common.config.as_deref(), flags(&a)?)?),
        Command::Forecast(a) => commands::forecast(config::resolve(a.common.config.as_deref(), flags(&a)?)?),
        Command::Select(a) => commands::select(config::resolve(a.common.config.as_deref(), flags(&a)?)?),
        Command::Factors(a) => commands::factors(config::resolve(a.common.config.as_deref(), flags(&a)?)?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<suffcast::Error>().map(suffcast::Error::kind) {
        Some(ErrorKind::Usage) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numerical) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
