//! The `norad` command line.
//!
//! Every command writes its JSON report and one `manifest.json` into its
//! `--out` directory. Exit codes: 0 success, 2 input or configuration
//! error, 3 incompatible artifact, 4 numeric failure.

mod commands;
mod manifest;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::NoradError;
use crate::graph::GraphFormat;

pub use manifest::{hash_file, InputFile, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_COMPATIBILITY: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &NoradError) -> i32 {
    match e {
        NoradError::Compatibility(_) => EXIT_COMPATIBILITY,
        NoradError::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "norad", version, about = "Spike-and-slab graph autoencoder with blockmodel and topic decoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a graph's edges into train, validation and test sets.
    Split(SplitArgs),
    /// Fit a model on the training edges of a split.
    Train(TrainArgs),
    /// Link prediction and clustering metrics on the test edges.
    Eval(EvalArgs),
    /// Refine isolated-node representations on the attribute likelihood.
    Rectify(RectifyArgs),
    /// Per-community attribute distributions of the topic decoder.
    Topics(TopicsArgs),
    /// Sample a planted synthetic instance.
    Synth(SynthArgs),
    /// Finite-difference check of the ELBO gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Features,
    Content,
}

impl From<FormatArg> for GraphFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Features => GraphFormat::Features,
            FormatArg::Content => GraphFormat::Content,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "features")]
    pub format: FormatArg,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.85)]
    pub train_ratio: f64,
    /// Share of the removed edges that goes to validation.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub split: PathBuf,
    /// JSON object with training config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub outer_rounds: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Any config key, `key=value` with a JSON value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// k-means cluster count; the number of label classes by default.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Also write the representation as `z.tsv`.
    #[arg(long)]
    pub export_z: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RectifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.001)]
    pub epsilon: f64,
    /// Keep zero coordinates at zero.
    #[arg(long)]
    pub preserve_mask: bool,
    /// Comma-separated node indices; the isolated nodes by default.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["community", "all"]))]
pub struct TopicsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub community: Option<usize>,
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = crate::decoder::atn::DEFAULT_TOPIC_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Split whose graph supplies document frequencies for filtering.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = crate::decoder::atn::DEFAULT_DOC_FREQ_CEILING)]
    pub doc_freq_ceiling: f64,
    /// One attribute name per line to exclude.
    #[arg(long)]
    pub stop_list: Option<PathBuf>,
    /// One attribute name per line, in column order.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group = clap::ArgGroup::new("source").args(["preset", "params"]))]
pub struct SynthArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file with generator parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Tiny,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "tiny")]
    pub scale: Scale,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs one command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.command {
        Command::Split(a) => commands::split(&a, &argv),
        Command::Train(a) => train::train(&a, &argv),
        Command::Eval(a) => commands::eval(&a, &argv),
        Command::Rectify(a) => commands::rectify(&a, &argv),
        Command::Topics(a) => commands::topics(&a, &argv),
        Command::Synth(a) => commands::synth(&a, &argv),
        Command::Gradcheck(a) => commands::gradcheck(&a, &argv),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
