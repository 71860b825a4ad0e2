//! `mhenet` subcommands: train, predict, eval and gradcheck.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for validation or
//! tolerance failures.

mod config;
mod eval;
mod gradcheck;
mod predict;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{DataConfig, RunConfig};
pub use eval::cmd_eval;
pub use gradcheck::cmd_gradcheck;
pub use predict::cmd_predict;
pub use train::{cmd_train, run_training, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mhenet::Error),
    #[error("{0}")]
    Failed(String),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        CliError::File {
            path: path.into(),
            msg: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// `HxW` or a single side length.
fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("`{s}` is not HxW"));
    match parts[..] {
        [a] => Ok([num(a)?; 2]),
        [h, w] => Ok([num(h)?, num(w)?]),
        _ => Err(format!("`{s}` is not HxW")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "mhenet", version, about = "RGB-D camouflaged object detection at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Network input size, `HxW` or a single side.
    #[arg(long, global = true, value_parser = parse_size)]
    pub size: Option<[usize; 2]>,
    /// Unified feature width C.
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    /// Comma-separated blocks to disable (them, ghem, adfm, texture,
    /// geometry, semantic, depth) or an ablation-table row (row1..row5).
    #[arg(long, global = true)]
    pub ablate: Option<String>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Write mask images for every sample of a dataset directory.
    Predict(PredictArgs),
    /// Score prediction masks against ground-truth masks.
    Eval(EvalArgs),
    /// Finite-difference check of every block and the full network.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root with Imgs/, Depths/ and GT/. Synthetic data when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation dataset root.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Number of synthetic training samples.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    /// The learning rate is divided by this factor at each decay.
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    /// Resolve and print the configuration, then exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory with Imgs/ and Depths/ (GT/ optional, sets the output size).
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the RGB (M1) and depth (M3) head outputs.
    #[arg(long)]
    pub all_heads: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corrupt one backward rule (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

pub(crate) fn set_threads(n: Option<usize>) {
    if let Some(n) = n {
        // The global pool can only be configured once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Gradcheck(a) => cmd_gradcheck(&a).map(|_| ()),
    }
}

/// Parse arguments, run the command and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
