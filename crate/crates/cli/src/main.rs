//! `macropca` command-line tool: fit, predict, map and simulate.

mod config;
mod error;
mod fit;
mod map;
mod predict;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "macropca", version, about = "Robust PCA for data with missing values, cellwise and rowwise outliers")]
#[command(after_help = "Settings resolve as: command-line flags, then the --config file, then built-in defaults.\n\
Exit codes: 0 success, 1 I/O, 2 parse or invalid input, 3 numerical failure, 4 dimension mismatch.")]
struct Cli {
    /// TOML file with default settings (keys as the long flag names, dashes as underscores)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write model.json, scores.csv, residuals.csv, flags.csv, od_sd.csv and data.csv
    Fit(FitArgs),
    /// Score new rows with a fitted model, one output line per input row
    Predict(PredictArgs),
    /// Draw the residual map and the outlier map of a fit bundle
    Map(MapArgs),
    /// Run a simulation preset and write the MSE curves and a manifest
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Macropca,
    Icpca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotateArg {
    Values,
    Residuals,
    None,
}

/// Options shared by commands that read CSV data.
#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Token read as a missing value; repeatable [default: "NA" and the empty field]
    #[arg(long = "na-token")]
    pub na_token: Vec<String>,

    /// First CSV column holds row labels
    #[arg(long)]
    pub row_names: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input CSV with a header row
    pub input: PathBuf,

    /// Output directory (created if needed)
    #[arg(long, short)]
    pub out: PathBuf,

    /// Fitting method [default: macropca]
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,

    /// Number of components [default: smallest count explaining --cum-var of the variance]
    #[arg(long)]
    pub k: Option<usize>,

    /// Upper bound on the number of components [default: 10]
    #[arg(long)]
    pub kmax: Option<usize>,

    /// Explained-variance target of the automatic rank choice [default: 0.8]
    #[arg(long)]
    pub cum_var: Option<f64>,

    /// Fraction of rows in the robust subsets, in [0.5, 1] [default: 0.5, maximal breakdown]
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Maximum number of imputation iterations [default: 20]
    #[arg(long)]
    pub maxiter: Option<usize>,

    /// Convergence tolerance on the subspace angle [default: 0.005]
    #[arg(long)]
    pub tol: Option<f64>,

    /// Number of projection directions for the outlyingness [default: 250]
    #[arg(long)]
    pub ndir: Option<usize>,

    /// Seed for the direction sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Quantile of the cell and row cutoffs of the cell detection [default: 0.99]
    #[arg(long)]
    pub p_cutoff: Option<f64>,

    /// Divide each column by a robust scale before fitting
    #[arg(long)]
    pub scale_columns: bool,

    #[command(flatten)]
    pub input_opts: InputArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model file written by `fit`
    #[arg(long)]
    pub model: PathBuf,

    /// Input CSV with a header row; `-` or absent reads standard input
    pub input: Option<PathBuf>,

    /// Output CSV; absent writes standard output
    #[arg(long, short)]
    pub out: Option<PathBuf>,

    /// Maximum number of re-imputation iterations per row [default: 20]
    #[arg(long)]
    pub maxiter: Option<usize>,

    /// Stop re-imputing when no imputed value moves more than this [default: 1e-8]
    #[arg(long)]
    pub tol: Option<f64>,

    #[command(flatten)]
    pub input_opts: InputArgs,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// Directory written by `fit`
    pub bundle: PathBuf,

    /// Output directory [default: the bundle directory]
    #[arg(long, short)]
    pub out: Option<PathBuf>,

    /// Aggregate cells into blocks of R rows by C columns, written RxC
    #[arg(long)]
    pub block: Option<String>,

    /// Text inside the cells [default: none]
    #[arg(long, value_enum)]
    pub annotate: Option<AnnotateArg>,

    /// Number of most outlying rows labelled on the outlier map [default: 5]
    #[arg(long)]
    pub label_top: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Study design: setting1..setting4 (MCAR), mar1..mar4 (MAR) or dposs_like [default: setting1]
    #[arg(long)]
    pub preset: Option<String>,

    /// Rows per data set [default: 100]
    #[arg(long)]
    pub n: Option<usize>,

    /// Columns per data set [default: 200; dposs_like uses 21]
    #[arg(long)]
    pub d: Option<usize>,

    /// Replications per grid point [default: 100]
    #[arg(long)]
    pub reps: Option<usize>,

    /// Master seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Comma-separated grid of gamma (or missing fractions for setting1/mar1) [default: the preset grid]
    #[arg(long)]
    pub grid: Option<String>,

    /// Output directory (created if needed)
    #[arg(long, short)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => config::FileConfig::load(p)?,
        None => config::FileConfig::default(),
    };
    match cli.command {
        Command::Fit(a) => fit::run(&a, &file),
        Command::Predict(a) => predict::run(&a, &file),
        Command::Map(a) => map::run(&a, &file),
        Command::Simulate(a) => simulate::run(&a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
