//! `inucleus`: train, evaluate and inspect inception-nucleus classifiers.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 usage or input error,
//! 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inception_core::model::Arch;
use inception_core::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "inucleus", version, about = "Raw-waveform sound classification with inception nuclei")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a manifest of WAV clips.
    Train(TrainArgs),
    /// Evaluate a checkpoint on manifest clips.
    Eval(EvalArgs),
    /// Classify one WAV file.
    Predict(PredictArgs),
    /// Print parameter counts for an architecture.
    CountParams(CountArgs),
    /// Write one convolution layer's filters as CSV.
    ExportFilters(ExportFiltersArgs),
    /// Write pre-pooling feature maps as TSV.
    ExportEmbeddings(ExportEmbeddingsArgs),
    /// Generate a synthetic WAV corpus with a manifest.
    SynthData(SynthArgs),
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value = "inception", value_parser = parse_arch)]
    pub arch: Arch,
    /// Clip root; defaults to the manifest's directory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated folds held out for testing.
    #[arg(long, value_delimiter = ',')]
    pub test_folds: Vec<u32>,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for checkpoints and logs.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Epochs without train-loss improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub min_delta: f64,
    /// Samples per forward pass within a batch.
    #[arg(long)]
    pub micro_batch: Option<usize>,
    /// Write `epoch_NNNN.ckpt` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Samples per clip after resampling to 8 kHz.
    #[arg(long, default_value_t = 32_000)]
    pub clip_len: usize,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Restrict to these folds; all rows by default.
    #[arg(long, value_delimiter = ',')]
    pub test_folds: Vec<u32>,
    #[arg(long, default_value_t = 32_000)]
    pub clip_len: usize,
}

#[derive(Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Pad or truncate to this many samples; the clip's own length otherwise.
    #[arg(long)]
    pub clip_len: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct CountArgs {
    #[arg(long, value_parser = parse_arch)]
    pub arch: Arch,
    #[arg(long, default_value_t = 10)]
    pub num_classes: usize,
    /// Report the total including batch-norm running statistics.
    #[arg(long)]
    pub include_non_trainable: bool,
}

#[derive(Args, Serialize)]
pub struct ExportFiltersArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Convolution name such as `conv1d1`; the first convolution by default.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct ExportEmbeddingsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32_000)]
    pub clip_len: usize,
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples per clip at 8 kHz, before any rate conversion.
    #[arg(long, default_value_t = 32_000)]
    pub clip_len: usize,
    /// Clips of each class are dealt round-robin over this many folds.
    #[arg(long, default_value_t = 10)]
    pub folds: u32,
    /// Sample rate of the written files.
    #[arg(long, default_value_t = 8000)]
    pub rate: u32,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::CountParams(a) => commands::count_params(a),
        Command::ExportFilters(a) => commands::export_filters(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
        Command::SynthData(a) => commands::synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
