//! `irtrel`: calibrate, generate and validate reliability-targeted IRT data.

mod commands;
mod config;
mod document;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irtrel::items::{GenMethod, ItemSource, Model};
use irtrel::psychometrics::Metric;

use crate::config::{parse_method, parse_metric, parse_model, parse_source, Profile};
use crate::error::{CliResult, EXIT_INVALID};

#[derive(Debug, Parser)]
#[command(name = "irtrel", version, about = "Reliability-targeted IRT simulation")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, env = "IRTREL_THREADS")]
    threads: Option<usize>,

    /// Log level for diagnostics on standard error.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the discrimination scale that reaches a target reliability.
    Calibrate(CalibrateArgs),
    /// Report the attainable reliability range before calibrating.
    Bounds(BoundsArgs),
    /// Simulate a response matrix from a stored calibration.
    Generate(GenerateArgs),
    /// Run a validation study and write its summary tables.
    Validate(ValidateArgs),
    /// Compare the scales of two stored calibrations.
    Compare(CompareArgs),
    /// Tabulate densities and moments of latent shapes.
    Shapes(ShapesArgs),
}

/// Structural configuration shared by `calibrate` and `bounds`.
#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Test length; taken from the file for `--item-source custom`.
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long, default_value = "rasch", value_parser = parse_model)]
    pub model: Model,
    /// normal, bimodal, skew_pos or heavy_tail.
    #[arg(long, default_value = "normal")]
    pub latent_shape: String,
    /// Comma-separated key=value pairs: delta, k, df, mu, sigma.
    #[arg(long)]
    pub latent_params: Option<String>,
    /// parametric, pool (empirical difficulties) or custom (fixed item file).
    #[arg(long, default_value = "parametric", value_parser = parse_source)]
    pub item_source: ItemSource,
    /// Difficulty file for `pool`, item file (`beta[,lambda0]`) for `custom`.
    #[arg(long)]
    pub pool_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub difficulty_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub difficulty_sigma: f64,
    /// Discrimination generator for 2PL: copula, conditional or independent.
    #[arg(long, default_value = "copula", value_parser = parse_method)]
    pub method: GenMethod,
    /// Quadrature sample size.
    #[arg(long, default_value_t = irtrel::eqc::DEFAULT_M_QUADRATURE)]
    pub m: usize,
    #[arg(long, default_value_t = 0.3)]
    pub c_lower: f64,
    #[arg(long, default_value_t = 3.0)]
    pub c_upper: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AlgorithmArg {
    Eqc,
    Sac,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub target: f64,
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, value_enum, default_value = "eqc")]
    pub algorithm: AlgorithmArg,
    #[arg(long, default_value = "avg_info", value_parser = parse_metric)]
    pub metric: Metric,
    /// SAC iterations.
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// SAC iterations discarded before averaging.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// SAC batch size per iteration.
    #[arg(long)]
    pub m_per_iter: Option<usize>,
    /// SAC evaluation sample size.
    #[arg(long)]
    pub eval_m: Option<usize>,
    #[arg(long)]
    pub step_a: Option<f64>,
    #[arg(long)]
    pub step_offset: Option<f64>,
    #[arg(long)]
    pub step_gamma: Option<f64>,
    /// Starting scale for SAC (default: geometric midpoint of the interval).
    #[arg(long)]
    pub c_init: Option<f64>,
    /// Start SAC from an EQC solution of the same configuration.
    #[arg(long)]
    pub warm_start: bool,
    /// Keep one item form for every SAC batch.
    #[arg(long)]
    pub no_redraw: bool,
    /// Result document (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SAC iterate trace (CSV).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Target to check against the attainable range.
    #[arg(long, allow_negative_numbers = true)]
    pub target: Option<f64>,
    /// Also scan the MSEM-based reliability for monotonicity.
    #[arg(long)]
    pub scan_msem: bool,
    #[arg(long, default_value_t = 25)]
    pub grid_size: usize,
    /// Report document (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Calibration document written by `calibrate`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Number of persons.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Response CSV; a `<out>.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Write an `item_1..item_I` header row.
    #[arg(long)]
    pub header: bool,
    /// Include the true abilities in the sidecar.
    #[arg(long)]
    pub emit_theta: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Study file (TOML); keys it leaves out keep the profile default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Print the resolved configuration and stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Reference calibration document.
    #[arg(long)]
    pub eqc: PathBuf,
    /// Calibration document compared against the reference.
    #[arg(long)]
    pub sac: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ShapesArgs {
    /// Shape as `name` or `name:key=value,...`; repeatable. Default: the
    /// four validation shapes.
    #[arg(long = "shape")]
    pub shapes: Vec<String>,
    /// Draws per shape.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Density CSV (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample moments CSV.
    #[arg(long)]
    pub moments: Option<PathBuf>,
}

fn run(cli: Cli, argv: &[String]) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(error::CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::CliError::usage(format!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Calibrate(a) => commands::calibrate(&a, argv),
        Command::Bounds(a) => commands::bounds(&a, argv),
        Command::Generate(a) => commands::generate(&a, argv),
        Command::Validate(a) => commands::validate(&a, argv),
        Command::Compare(a) => commands::compare(&a, argv),
        Command::Shapes(a) => commands::shapes(&a, argv),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID as u8 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
