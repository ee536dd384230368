//! The `eopt` command line: synthetic data, training, forecasting,
//! evaluation, embeddings and sizing arithmetic.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numerical failure.

use std::env;
use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use eopt::error::Error;

pub mod commands;
pub mod manifest;
pub mod numfmt;
pub mod selection;
pub mod settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const THREADS_VAR: &str = "EOPT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "eopt", version, about = "Autoregressive transformer experiments on reflectance time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its archetype labels.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Roll a trained model forward from a divergence date.
    Forecast(ForecastArgs),
    /// Phase-folded climatology forecast.
    Baseline(BaselineArgs),
    /// Median L1 error per lead time for one or more forecasts.
    Evaluate(EvaluateArgs),
    /// Pixel embeddings, PCA coordinates and scatter plots.
    Embed(EmbedArgs),
    /// Compute-optimal token or parameter budget.
    Size(SizeArgs),
    /// Emissions in kgCO2eq for an energy use and carbon intensity.
    Emissions(EmissionsArgs),
}

/// Options shared by every artifact-producing subcommand.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// `key = value` file; flags take precedence. Run manifests are valid here.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any config key not exposed as a flag.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Default)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub pixels: Option<String>,
    /// First date, YYYY-MM-DD.
    #[arg(long)]
    pub start: Option<String>,
    /// Last date, YYYY-MM-DD.
    #[arg(long)]
    pub end: Option<String>,
    /// Days between observations.
    #[arg(long)]
    pub cadence: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub noise_sigma: Option<String>,
    #[arg(long)]
    pub trend_max: Option<String>,
    #[arg(long)]
    pub regime_switch_prob: Option<String>,
    #[arg(long)]
    pub phase_jitter_days: Option<String>,
    #[arg(long)]
    pub pixel_variation: Option<String>,
    /// f16 or f32.
    #[arg(long)]
    pub storage: Option<String>,
    /// Dataset file to write.
    #[arg(long)]
    pub out: Option<String>,
    /// Labels file; defaults to the dataset path with extension `labels.csv`.
    #[arg(long)]
    pub labels: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub data: Option<String>,
    /// Directory for the checkpoint, loss log and manifest.
    #[arg(long)]
    pub out_dir: Option<String>,
    /// Model preset: nano, micro, toy or a size label.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, alias = "steps")]
    pub total_steps: Option<String>,
    #[arg(long)]
    pub tokens_per_step: Option<String>,
    #[arg(long, alias = "lr")]
    pub max_lr: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Training only sees dates before this one.
    #[arg(long)]
    pub divergence: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub divergence: Option<String>,
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long)]
    pub cadence: Option<String>,
    /// `all`, a range `a..b` or a list `i,j,k`.
    #[arg(long)]
    pub pixels: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub divergence: Option<String>,
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long)]
    pub cadence: Option<String>,
    #[arg(long)]
    pub pixels: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Dataset the forecasts were made from.
    #[arg(long)]
    pub data: Option<String>,
    /// Forecast trajectories as `name=path` or `path`; repeatable.
    #[arg(long = "pred", value_name = "NAME=PATH")]
    pub pred: Vec<String>,
    /// Truth trajectories; read from the dataset when absent.
    #[arg(long)]
    pub truth: Option<String>,
    /// Index name or `band_k`.
    #[arg(long)]
    pub index: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Calendar year window; alternative to --start/--end.
    #[arg(long)]
    pub year: Option<String>,
    #[arg(long)]
    pub start: Option<String>,
    /// Exclusive end of the window.
    #[arg(long)]
    pub end: Option<String>,
    /// `all` or a range `a..b`.
    #[arg(long)]
    pub pixels: Option<String>,
    #[arg(long)]
    pub components: Option<String>,
    /// Comma-separated summary columns, or `all`.
    #[arg(long)]
    pub colorings: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct SizeArgs {
    /// Parameter count, e.g. 700e6.
    #[arg(long)]
    pub params: Option<String>,
    /// Training tokens, e.g. 1e15.
    #[arg(long)]
    pub tokens: Option<String>,
}

#[derive(Args, Debug)]
pub struct EmissionsArgs {
    /// Energy used, kWh.
    #[arg(allow_hyphen_values = true)]
    pub kwh: String,
    /// Carbon intensity, kgCO2eq per kWh.
    #[arg(allow_hyphen_values = true)]
    pub intensity: String,
}

/// Exit code for a pipeline error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalAbort { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Sizes the global worker pool from `EOPT_THREADS`. Later calls keep the
/// first pool.
pub fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Results go to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = configure_threads().and_then(|_| commands::execute(cli.command, out));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            exit_code(&e)
        }
    }
}
