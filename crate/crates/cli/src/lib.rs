//! `ssmdisc` command-line driver.
//!
//! Each subcommand writes its artifacts plus a [`RunManifest`] describing
//! the resolved command, its inputs and the digests of its outputs; `replay`
//! re-runs a manifest and checks the outputs come back byte-identical.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{sha256_file, FileDigest, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ssmdisc_core::Error),
    #[error(transparent)]
    Bench(#[from] ssmdisc_bench::BenchError),
    #[error("replay of {path}: {detail}")]
    Replay { path: String, detail: String },
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            CliError::Core(e) => e.is_numerical(),
            CliError::Bench(e) => e.is_numerical(),
            _ => false,
        };
        if numerical {
            2
        } else {
            1
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "ssmdisc", version, about = "Discretize, scan, compare and benchmark linear state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Discretize a continuous system file.
    Discretize(DiscretizeArgs),
    /// Run the recurrence of a system over an input CSV.
    Scan(ScanArgs),
    /// Convergence orders, errors and timings of several methods.
    Compare(CompareArgs),
    /// Whether a method keeps sampled stable eigenvalues inside the unit disk.
    Stability(StabilityArgs),
    /// Frequency response of a discretized system.
    Freq(FreqArgs),
    /// Train the toy classifier for every method and seed.
    Bench(BenchArgs),
    /// Re-run a manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DiscretizeArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub delta: f64,
    /// Hold order for `--method hoh`.
    #[arg(long)]
    pub hoh_order: Option<usize>,
    /// `cubic` or coefficients `c0/c1/...` for `--method pol`.
    #[arg(long)]
    pub pol_basis: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScanArgs {
    /// A discretized system, or a continuous one together with `--method` and `--delta`.
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add a backward scan over the reversed input.
    #[arg(long)]
    pub bidirectional: bool,
    /// Blocked associative scan with this block length.
    #[arg(long)]
    pub blocked: Option<usize>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// `sin`, `sin:W`, `sin-mix`, `const:C` or `zero`.
    #[arg(long)]
    pub signal: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub deltas: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct StabilityArgs {
    #[arg(long)]
    pub method: String,
    /// `A:B:STEPS`, evenly spaced eigenvalues from A to B.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_range: String,
    #[arg(long)]
    pub delta: f64,
    /// CSV of the samples; printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FreqArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub omegas: Vec<f64>,
    /// CSV of the response; printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// `sinusoid-class`, `copy-memory` or `toy-shapes`.
    #[arg(long)]
    pub task: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Training seeds: `0,1,2` or a half-open range `0..10`.
    #[arg(long)]
    pub seeds: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the generated dataset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub state_dim: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub unidirectional: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Smallest mean accuracy gain counted as significant.
    #[arg(long, default_value_t = 0.0)]
    pub min_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Caps the rayon pool at `SSMDISC_THREADS` (0 or unset = automatic). The
/// global pool can only be built once per process; later calls keep it.
fn configure_threads() -> Result<()> {
    let n = match std::env::var("SSMDISC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("SSMDISC_THREADS='{v}' is not a thread count")))?,
        Err(_) => 0,
    };
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match configure_threads().and_then(|_| commands::execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
