//! Command implementations, run configuration and attention condensation.

mod commands;
mod condense;
mod config;
mod suite;

pub use commands::{
    ci95, cmd_attn_condense, cmd_eig, cmd_gradcheck, cmd_nodecls, cmd_synth, downsample_indices, parse_truncate,
};
pub use condense::{condense_attention, Band, CondenseError, CondensedAttention, RANGE_SLACK, ROW_SUM_TOLERANCE};
pub use config::{NodeClsConfig, RunConfig, SynthConfig, Truncation};
pub use suite::{check_model, gradcheck_suite, SuiteEntry, GRADCHECK_STEP};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::graph::{FilterSpec, GraphError};
use crate::model::ModelError;
use crate::train::TrainError;

/// Exit status 1: the run itself failed.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit status 2: bad flags, config or input files.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Linalg(_) => CliError::Runtime(e.to_string()),
            GraphError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Graph(g) => g.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CondenseError> for CliError {
    fn from(e: CondenseError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "specformer",
    version,
    about = "Spectral Transformer for graph filtering and node classification"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a known spectral filter on grid signals.
    Synth(SynthArgs),
    /// Node classification on a dataset directory.
    Nodecls(NodeClsArgs),
    /// Eigenvalues of a normalized Laplacian.
    Eig(EigArgs),
    /// Finite-difference check of every op and the model.
    Gradcheck,
    /// Condense an attention matrix over eigenvalue bands.
    AttnCondense(CondenseArgs),
}

#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// lowpass, highpass, bandpass, bandrejection, comb, identity or zero.
    #[arg(long, value_parser = parse_filter)]
    pub filter: Option<FilterSpec>,
    /// Grid side `N` or `HxW`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    #[arg(long)]
    pub images: Option<usize>,
    /// Largest number of rows in learned_filter.csv.
    #[arg(long)]
    pub max_points: Option<usize>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct NodeClsArgs {
    /// Directory with edges.txt, features.csv and labels.txt.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Keep only the ends of the spectrum, e.g. `smallest:50,largest:0`.
    #[arg(long, value_parser = parse_truncate)]
    pub truncate: Option<Truncation>,
    /// Run the seeds on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EigArgs {
    #[arg(long, value_parser = parse_grid, conflicts_with = "data", required_unless_present = "data")]
    pub grid: Option<(usize, usize)>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CondenseArgs {
    /// q×q attention matrix, one comma-separated row per line.
    #[arg(long, value_name = "CSV")]
    pub attention: PathBuf,
    /// q eigenvalues, comma- or newline-separated.
    #[arg(long, value_name = "CSV")]
    pub lambdas: PathBuf,
}

fn parse_filter(s: &str) -> Result<FilterSpec, String> {
    s.parse().map_err(|e: GraphError| e.to_string())
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let dims: Result<Vec<usize>, _> = s.split(['x', 'X']).map(str::parse).collect();
    match dims.as_deref() {
        Ok([n]) if *n > 0 => Ok((*n, *n)),
        Ok([h, w]) if *h > 0 && *w > 0 => Ok((*h, *w)),
        _ => Err(format!("expected N or HxW with positive sizes, got `{s}`")),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Synth(a) => cmd_synth(config.with_synth_args(a, cli.seed), &out).map(|_| ()),
        Command::Nodecls(a) => cmd_nodecls(config.with_nodecls_args(a, cli.seed), &out).map(|_| ()),
        Command::Eig(a) => cmd_eig(a, &out),
        Command::Gradcheck => cmd_gradcheck(cli.seed.unwrap_or(config.train.seed), &out),
        Command::AttnCondense(a) => cmd_attn_condense(&a.attention, &a.lambdas, cli.out.as_deref()).map(|_| ()),
    }
}
