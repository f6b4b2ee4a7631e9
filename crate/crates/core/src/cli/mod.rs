//! The `rdsandwich` command line.
//!
//! Each command writes its artifacts plus `manifest.json` into `--out`. The
//! manifest holds the full argument set with the effective seed, so
//! `rdsandwich --from-manifest DIR/manifest.json --out OTHER` redoes the run.
//! `RD_SEED` overrides the seed of any run, including a replayed one.
//!
//! Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 no convergence,
//! 1 anything else (I/O).

mod commands;
mod manifest;
mod spec;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Activation;

pub use commands::execute;
pub use manifest::{Manifest, MANIFEST_FILE};
pub use spec::{BuiltSource, SourceSpec, SpecError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rdsandwich", version, about = "Sandwich bounds on rate-distortion functions from samples")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Replay the command recorded in a manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for sweeps and evaluation. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Draw samples from a source into a CSV or binary file.
    GenSource(GenSourceArgs),
    /// Exact or numerically exact R(D) for sources that admit it.
    Oracle(OracleArgs),
    /// Train one upper-bound model and evaluate its rate-distortion point.
    TrainUb(TrainUbArgs),
    /// Train one lower-bound model and evaluate its intercept.
    TrainLb(TrainLbArgs),
    /// Both sweeps over a slope list, plus the gap table.
    Sandwich(SandwichArgs),
    /// Monte Carlo means of C_k over a list of k.
    DiagCk(DiagCkArgs),
    /// Mean, standard error and confidence bounds of a CSV column.
    Stats(StatsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSource(_) => "gen-source",
            Command::Oracle(_) => "oracle",
            Command::TrainUb(_) => "train-ub",
            Command::TrainLb(_) => "train-lb",
            Command::Sandwich(_) => "sandwich",
            Command::DiagCk(_) => "diag-ck",
            Command::Stats(_) => "stats",
        }
    }

    pub(crate) fn seed_mut(&mut self) -> Option<&mut u64> {
        match self {
            Command::GenSource(a) => Some(&mut a.seed),
            Command::Oracle(a) => Some(&mut a.seed),
            Command::TrainUb(a) => Some(&mut a.seed),
            Command::TrainLb(a) => Some(&mut a.seed),
            Command::Sandwich(a) => Some(&mut a.seed),
            Command::DiagCk(a) => Some(&mut a.seed),
            Command::Stats(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Csv,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GenSourceArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FileFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long)]
    pub source: String,
    /// Slopes to solve at (comma separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambda: Vec<f64>,
    /// Target distortions (comma separated).
    #[arg(long = "D", visible_alias = "target-D", value_delimiter = ',', allow_negative_numbers = true)]
    pub distortion: Vec<f64>,
    /// Histogram range and bins per axis for continuous 1-D or 2-D sources.
    #[arg(long, allow_negative_numbers = true)]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_bins: Option<usize>,
    /// Draws used to fill the histogram.
    #[arg(long, default_value_t = 1_000_000)]
    pub grid_samples: usize,
    /// Evenly spaced reproduction points spanning a 1-D support (default: the support itself).
    #[arg(long)]
    pub reproduction_points: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorChoice {
    /// Flow for banana sources, Gaussian otherwise.
    Auto,
    Gaussian,
    Flow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderChoice {
    /// Identity when the latent and source dimensions agree, MLP otherwise.
    Auto,
    Identity,
    Mlp,
}

/// Upper-bound model and training options.
#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct UbOptions {
    /// Latent dimension (default: source dimension).
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub prior: PriorChoice,
    #[arg(long, default_value_t = 4)]
    pub flow_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub flow_hidden: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub decoder: DecoderChoice,
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub encoder_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub decoder_hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "softplus")]
    pub activation: Activation,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10_000)]
    pub m_eval: usize,
    #[arg(long, default_value_t = 5_000)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainUbArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub ub: UbOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Lower-bound model and training options. Unset sizes follow the source
/// family: `k = 1024` and two layers of `20 n` units for Gaussians, `k = 2048`
/// and three layers of `min(100 n, 1000)` units otherwise.
#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct LbOptions {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: Option<u64>,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_t: u64,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.8)]
    pub alpha_ema: f64,
    #[arg(long, default_value_t = 100)]
    pub m_eval: usize,
    #[arg(long, default_value_t = 500)]
    pub climb_max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub climb_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub merge_radius: f64,
    #[arg(long, default_value_t = 500)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainLbArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub lb: LbOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SandwichArgs {
    #[arg(long)]
    pub source: String,
    /// Slopes shared by both sweeps (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub lb_k: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub lb_m: u64,
    #[arg(long, default_value_t = 10)]
    pub lb_top_t: u64,
    #[arg(long, value_delimiter = ',')]
    pub lb_hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5_000)]
    pub lb_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lb_lr: f64,
    #[arg(long, default_value_t = 100)]
    pub lb_m_eval: usize,
    #[arg(long)]
    pub ub_latent_dim: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub ub_prior: PriorChoice,
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub ub_hidden: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub ub_batch_size: usize,
    #[arg(long, default_value_t = 50_000)]
    pub ub_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub ub_lr: f64,
    #[arg(long, default_value_t = 10_000)]
    pub ub_m_eval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct DiagCkArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub lambda: f64,
    /// Increasing list of k (comma separated).
    #[arg(long = "ks", value_delimiter = ',', default_value = "1,2,4,8")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Constant `log u` used when no trained model is given.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub log_u: f64,
    /// Use the `log u` network of a `train-lb` run (its manifest).
    #[arg(long)]
    pub lb_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    pub input: PathBuf,
    /// Column name (with a header) or zero-based index.
    #[arg(long, default_value = "0")]
    pub column: String,
    /// The first line is a header.
    #[arg(long)]
    pub header: bool,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
