//! `mpdc` command-line front end. Commands return a JSON value that the
//! binary prints on stdout; training also streams one JSON line per epoch.

pub mod bench;
pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mpdc_core::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Short machine-readable category for the JSON error object.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(mpdc_core::Error::StructureViolation { .. }) => "structure_violation",
            CliError::Core(mpdc_core::Error::Io(_)) | CliError::Io(..) => "io",
            CliError::Core(_) => "invalid_input",
            CliError::Config(_) => "config",
            CliError::Parse { .. } => "parse",
            CliError::Usage(_) => "usage",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mpdc", version, about = "Permuted block-diagonal masks for fully-connected networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a permuted block-diagonal mask and write it as an MPDM file.
    GenMask(GenMaskArgs),
    /// Train a masked network; writes a masked-dense MPDC model.
    Train(TrainArgs),
    /// Convert a masked-dense model into packed block-diagonal form.
    Pack(PackArgs),
    /// Report test accuracy of a dense or packed model.
    Eval(EvalArgs),
    /// Time the dense kernel against the packed block kernel.
    Bench(BenchArgs),
    /// Recover block structure from a sparse support file.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Args)]
pub struct GenMaskArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Fraction of nonzeros; k = round(1 / sparsity).
    #[arg(long, conflicts_with = "k", required_unless_present = "k")]
    pub sparsity: Option<f64>,
    /// Number of diagonal blocks.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the support as a text file readable by `decompose`.
    #[arg(long)]
    pub support_out: Option<PathBuf>,
}

/// Where training and evaluation data come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory with the uncompressed MNIST IDX files (gunzip them first).
    /// Defaults to $MPDC_MNIST_DIR, then ./data/mnist.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use seeded Gaussian blobs sized to the network instead of MNIST.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 100)]
    pub blob_per_class: usize,
    #[arg(long, default_value_t = 10.0)]
    pub blob_separation: f64,
    #[arg(long, default_value_t = 0)]
    pub blob_seed: u64,
    /// Use only the first N training samples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    pub eval_limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Train T models with seeds seed, seed+1, ... and report min/mean/max
    /// accuracy. The model written to --out is the first one.
    #[arg(long, default_value_t = 1)]
    pub mask_trials: usize,
    /// Use block-diagonal masks with identity permutations.
    #[arg(long)]
    pub no_permute: bool,
    /// Override the config's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PackMode {
    /// Accept any permutations; boundary gathers are precomposed.
    Independent,
    /// Require every interior boundary gather to cancel out.
    Aligned,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PackMode::Independent)]
    pub mode: PackMode,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Kernel threads for packed models (default $MPDC_THREADS or 1).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 4096)]
    pub m: usize,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 50)]
    pub batch: usize,
    /// Kernel threads for the packed side (default $MPDC_THREADS or 1).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Text file: a header line "m n", then one "row col" pair per line.
    /// Blank lines and lines starting with '#' are ignored.
    #[arg(long)]
    pub support: PathBuf,
}

/// Thread count from a flag, else `MPDC_THREADS`, else 1.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize, CliError> {
    let threads = match flag {
        Some(t) => t,
        None => match std::env::var("MPDC_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("MPDC_THREADS={v:?} is not a count")))?,
            Err(_) => 1,
        },
    };
    if threads == 0 {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    Ok(threads)
}

/// Runs one command. Streamed output (training metrics) goes to `stream`;
/// the returned value is the command's final JSON result.
pub fn run_with(cli: &Cli, stream: &mut dyn Write) -> Result<Value, CliError> {
    match &cli.command {
        Command::GenMask(a) => commands::gen_mask(a),
        Command::Train(a) => commands::train(a, stream),
        Command::Pack(a) => commands::pack(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Decompose(a) => commands::decompose(a),
    }
}

pub fn run(cli: &Cli) -> Result<Value, CliError> {
    run_with(cli, &mut std::io::stdout().lock())
}
