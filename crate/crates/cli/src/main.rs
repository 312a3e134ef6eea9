//! `pottab`: randomization-based analysis of 2×2 tables from the command line.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pottab::sim::DEFAULT_SEED;

/// Exit status for usage errors (clap also uses 2).
pub const EXIT_USAGE: u8 = 2;
/// Exit status for errors raised by the analysis itself.
pub const EXIT_ANALYSIS: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pottab", version, about = "Causal inference for 2x2 tables from completely randomized experiments")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fisher test plus Neymanian and Bayesian inference for one observed table.
    Analyze(AnalyzeArgs),
    /// Credible intervals over a grid of the association parameter log(gamma).
    Sensitivity(SensitivityArgs),
    /// Repeated-sampling evaluation of the methods on a science table.
    Simulate(SimulateArgs),
    /// Fisher randomization test of the sharp null.
    Fisher(FisherArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TableSource {
    /// Observed counts n11,n10,n01,n00 (treated successes, treated failures,
    /// control successes, control failures).
    #[arg(long, value_parser = input::counts_arg)]
    pub table: Option<[u64; 4]>,
    /// CSV rows of n11,n10,n01,n00, or a JSON object or array with those fields.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to POTTAB_SEED, then to the built-in default.
    #[arg(long, env = "POTTAB_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Beta prior pseudo-counts alpha1,beta1,alpha0,beta0.
    #[arg(long, value_parser = input::prior_arg, default_value = "1,1,1,1")]
    pub prior: pottab::bayes::BetaPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Crd,
    LogCrr,
    LogCor,
    All,
}

impl MeasureArg {
    pub fn measures(self) -> Vec<pottab::Measure> {
        use pottab::Measure;
        match self {
            MeasureArg::Crd => vec![Measure::Crd],
            MeasureArg::LogCrr => vec![Measure::LogCrr],
            MeasureArg::LogCor => vec![Measure::LogCor],
            MeasureArg::All => Measure::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub source: TableSource,
    /// Interval level.
    #[arg(long, default_value_t = 0.95, value_parser = input::level_arg)]
    pub level: f64,
    /// Posterior draws for the Bayesian intervals.
    #[arg(long, default_value_t = pottab::bayes::DEFAULT_DRAWS, value_parser = clap::value_parser!(u64).range(1..))]
    pub draws: u64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Add 0.5 to every cell for the log measures.
    #[arg(long)]
    pub haldane: bool,
    /// Use N_w - 1 denominators in the classical log-measure variances.
    #[arg(long)]
    pub finite_sample_denominators: bool,
    /// Report highest-density rather than equal-tailed credible intervals.
    #[arg(long)]
    pub hdi: bool,
    /// Clip risk-difference intervals to [-1, 1].
    #[arg(long)]
    pub clip: bool,
    /// Emit JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub source: TableSource,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    pub log_gamma_min: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub log_gamma_max: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 31, value_parser = clap::value_parser!(u64).range(1..))]
    pub points: u64,
    #[arg(long, value_enum, default_value_t = MeasureArg::All)]
    pub measure: MeasureArg,
    #[arg(long, default_value_t = 0.95, value_parser = input::level_arg)]
    pub level: f64,
    #[arg(long, default_value_t = pottab::bayes::DEFAULT_DRAWS, value_parser = clap::value_parser!(u64).range(1..))]
    pub draws: u64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("design").required(true).args(["paper_study", "science"]))]
pub struct SimulateArgs {
    /// One of the fixed studies: independent, positive, negative, sharp_null_T5.
    #[arg(long, value_parser = input::study_arg)]
    pub paper_study: Option<pottab::sim::StudyId>,
    /// Science table N11,N10,N01,N00.
    #[arg(long, value_parser = input::counts_arg, requires = "n1")]
    pub science: Option<[u64; 4]>,
    /// Number of treated units for --science.
    #[arg(long)]
    pub n1: Option<u64>,
    #[arg(long, default_value_t = pottab::sim::DEFAULT_REPLICATIONS, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Posterior draws per replicate.
    #[arg(long, default_value_t = pottab::sim::DEFAULT_SIM_DRAWS, value_parser = clap::value_parser!(u64).range(1..))]
    pub draws: u64,
    #[arg(long, default_value_t = 0.95, value_parser = input::level_arg)]
    pub level: f64,
    /// Comma-separated methods for --science (default: all).
    #[arg(long, value_delimiter = ',', value_parser = input::method_arg)]
    pub methods: Vec<pottab::Method>,
    #[arg(long, value_enum, default_value_t = MeasureArg::All)]
    pub measure: MeasureArg,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Write report.json, report.csv and panel.csv into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Print the grouped panel CSV instead of the tidy CSV.
    #[arg(long)]
    pub plot_data: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FisherArgs {
    #[command(flatten)]
    pub source: TableSource,
    /// Use this many Monte Carlo draws instead of the exact test.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub monte_carlo: Option<u64>,
    /// Order tables by null probability rather than by |tau_hat| for the two-sided p-value.
    #[arg(long)]
    pub pmf_ordering: bool,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ANALYSIS);
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a),
        Command::Sensitivity(a) => commands::sensitivity(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fisher(a) => commands::fisher(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
