//! `lvlab` — command-line front end for the vocabulary-scaling laboratory.
//!
//! Subcommands map onto the library pipeline: `verify` runs closed-form
//! predictions against their Monte Carlo oracles, `zipf` handles
//! token-frequency tables, `sweep` runs and analyzes learning-rate grids,
//! and `report` renders result tables as static SVG plots.
//!
//! Exit codes: 0 when every requested check passes, 1 when a check or an
//! analyzed sweep cell fails, 2 on usage or I/O errors (malformed flags,
//! missing files, unreadable tables).

mod checks;
mod manifest;
mod report;
mod sweep_cmd;
mod zipf_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Usage/IO failures exit 2; failed checks exit 1.
#[derive(Debug)]
pub enum CliError {
    /// Invalid flag values, malformed inputs, or filesystem problems.
    Usage(String),
    /// At least one check row failed its tolerance.
    CheckFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "error: {msg}"),
            CliError::CheckFailed(msg) => write!(f, "check failed: {msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Usage(format!("io error: {err}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "lvlab",
    version,
    about = "Numerical laboratory for vocabulary-dependent learning-rate scaling"
)]
struct Cli {
    /// Directory where output tables, plots, and the run manifest are written.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-form prediction against its Monte Carlo oracle.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Token-frequency utilities: sample counts, fit exponents, partial sums.
    #[command(subcommand)]
    Zipf(ZipfCommand),
    /// Learning-rate grid sweeps over (width, vocabulary) configurations.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Render static SVG plots from result tables.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Mean of sign(Z)*G for correlated Gaussians against sqrt(2/pi)*rho.
    Stein(SteinArgs),
    /// Sign-product coordinate variance for an independent uniform-weight batch.
    Covariance(CovarianceArgs),
    /// Sign-product coordinate variance under Zipf token frequencies.
    Hetero(HeteroArgs),
    /// One-step decomposition identity and update-norm concentration bands.
    OneStep(OneStepArgs),
    /// Deterministic regime diagnostics: scaling slopes and dominant terms.
    Regimes(RegimesArgs),
}

#[derive(Args)]
pub struct SteinArgs {
    /// Correlation coefficients to test (repeatable).
    #[arg(long = "rho", value_name = "RHO", default_values_t = vec![0.0, 0.25, 0.5, 1.0])]
    pub rhos: Vec<f64>,
    /// Monte Carlo trials per correlation value.
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    /// Master seed for the random-number streams.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args)]
pub struct CovarianceArgs {
    /// Hidden width.
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Batch dimension (columns of the weight matrix).
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    /// Monte Carlo trials.
    #[arg(long, default_value_t = 20_000)]
    pub trials: u64,
    /// Master seed for the random-number streams.
    #[arg(long, default_value_t = 2)]
    pub seed: u64,
}

#[derive(Args)]
pub struct HeteroArgs {
    /// Hidden width.
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Vocabulary size.
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    /// Zipf exponent of the token distribution.
    #[arg(long = "zipf-a", default_value_t = 1.0)]
    pub zipf_a: f64,
    /// Token ranks to test (repeatable, 1-based).
    #[arg(long = "token", value_name = "RANK", default_values_t = vec![1, 10, 100])]
    pub tokens: Vec<usize>,
    /// Monte Carlo trials per token.
    #[arg(long, default_value_t = 20_000)]
    pub trials: u64,
    /// Master seed for the random-number streams.
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
}

#[derive(Args)]
pub struct OneStepArgs {
    /// Random model instances for the exact reconstruction identity (0 skips).
    #[arg(long, default_value_t = 50)]
    pub trials: u64,
    /// Independent initializations per concentration-band cell (0 skips).
    #[arg(long, default_value_t = 200)]
    pub inits: u64,
    /// Hidden widths for the concentration-band lattice (repeatable).
    #[arg(long = "d", value_name = "WIDTH", default_values_t = vec![16, 32, 64])]
    pub widths: Vec<usize>,
    /// Vocabulary sizes for the concentration-band lattice (repeatable).
    #[arg(long = "m", value_name = "VOCAB", default_values_t = vec![128, 512, 2048])]
    pub vocabs: Vec<usize>,
    /// Token ranks for the concentration-band lattice (repeatable, 1-based).
    #[arg(long = "token", value_name = "RANK", default_values_t = vec![1, 2, 4])]
    pub tokens: Vec<usize>,
    /// Zipf exponent of the token distribution.
    #[arg(long = "zipf-a", default_value_t = 1.0)]
    pub zipf_a: f64,
    /// Master seed for the random-number streams.
    #[arg(long, default_value_t = 4)]
    pub seed: u64,
}

#[derive(Args)]
pub struct RegimesArgs {
    /// Accepted for interface uniformity; the diagnostics are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand)]
enum ZipfCommand {
    /// Fit a power-law exponent to an observed rank/count table.
    Fit(ZipfFitArgs),
    /// Sample a synthetic counts file from a Zipf distribution.
    Gen(ZipfGenArgs),
    /// Tabulate the partial sums controlling the mean squared frequency.
    Lemma1(ZipfLemma1Args),
}

#[derive(Args)]
pub struct ZipfFitArgs {
    /// Path to a tab-separated `rank<TAB>count` table.
    #[arg(long)]
    pub counts: PathBuf,
}

#[derive(Args)]
pub struct ZipfGenArgs {
    /// Vocabulary size.
    #[arg(long, default_value_t = 4096)]
    pub m: usize,
    /// Zipf exponent.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Number of token draws.
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: u64,
    /// Master seed for the random-number streams.
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ZipfLemma1Args {
    /// Zipf exponent.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Largest vocabulary size in the scan (powers of two from 16 up).
    #[arg(long = "max-m", default_value_t = 16_384)]
    pub max_m: usize,
    /// Divide each partial sum by the squared normalization constant.
    #[arg(long, default_value_t = false)]
    pub normalized: bool,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Run the learning-rate grid described by a JSON configuration file.
    Run(SweepRunArgs),
    /// Recompute per-configuration optima and the width-scaling fit from a record table.
    Analyze(SweepAnalyzeArgs),
}

#[derive(Args)]
pub struct SweepRunArgs {
    /// Path to the sweep configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args)]
pub struct SweepAnalyzeArgs {
    /// Path to a previously written sweep record table.
    #[arg(long)]
    pub records: PathBuf,
    /// Near-optimal band width used when averaging qualifying learning rates.
    #[arg(long, default_value_t = lvlab_core::sweep::OPTIMAL_BAND)]
    pub threshold: f64,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Optimal-learning-rate table to plot with reference slopes.
    #[arg(long)]
    pub optimal: Option<PathBuf>,
    /// Rank/count table to plot as a rank-frequency curve.
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

/// Caps the data-parallel worker count when `LVLAB_THREADS` is set.
#[cfg(feature = "parallel")]
fn configure_threads() {
    if let Ok(raw) = std::env::var("LVLAB_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error from double initialization: the pool can
                // only be configured once per process, which is all we need.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => log::warn!("ignoring LVLAB_THREADS={raw:?}: expected a positive integer"),
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() {}

fn run(cli: Cli) -> CliResult<()> {
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Verify(cmd) => {
            let (name, rows, seed) = match cmd {
                VerifyCommand::Stein(args) => ("stein", checks::run_stein(&args)?, Some(args.seed)),
                VerifyCommand::Covariance(args) => {
                    ("covariance", checks::run_covariance(&args)?, Some(args.seed))
                }
                VerifyCommand::Hetero(args) => {
                    ("hetero", checks::run_hetero(&args)?, Some(args.seed))
                }
                VerifyCommand::OneStep(args) => {
                    ("one_step", checks::run_one_step(&args)?, Some(args.seed))
                }
                VerifyCommand::Regimes(args) => {
                    ("regimes", checks::run_regimes(&args)?, Some(args.seed))
                }
            };
            let csv_path = cli.out.join(format!("verify_{name}.csv"));
            checks::write_check_csv(&csv_path, &rows)?;
            manifest::write_manifest(&cli.out, seed, &[&csv_path])?;
            let failed: Vec<&checks::CheckRow> = rows.iter().filter(|r| !r.pass).collect();
            for row in &rows {
                println!("{}", row.console_line());
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::CheckFailed(format!(
                    "{} of {} rows outside tolerance (see {})",
                    failed.len(),
                    rows.len(),
                    csv_path.display()
                )))
            }
        }
        Command::Zipf(cmd) => match cmd {
            ZipfCommand::Fit(args) => zipf_cmd::run_fit(&cli.out, &args),
            ZipfCommand::Gen(args) => zipf_cmd::run_gen(&cli.out, &args),
            ZipfCommand::Lemma1(args) => zipf_cmd::run_lemma1(&cli.out, &args),
        },
        Command::Sweep(cmd) => match cmd {
            SweepCommand::Run(args) => sweep_cmd::run_sweep_cmd(&cli.out, &args),
            SweepCommand::Analyze(args) => sweep_cmd::run_analyze_cmd(&cli.out, &args),
        },
        Command::Report(args) => report::run_report(&cli.out, &args),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            match err {
                CliError::CheckFailed(_) => ExitCode::from(1),
                CliError::Usage(_) => ExitCode::from(2),
            }
        }
    }
}
