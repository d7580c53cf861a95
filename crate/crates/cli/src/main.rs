mod caption;
mod config;
mod evaluate;
mod judge;
mod manifest;
mod plots;
mod stats;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit code for a run that finished but left some samples unprocessed,
/// or failed at runtime (divergence, transport).
const EXIT_PARTIAL: u8 = 1;
/// Exit code for usage, configuration and input errors.
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "maskcap", version, about = "Mask-referring region captioning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one training stage and write a checkpoint, report and manifest.
    Train(TrainArgs),
    /// Caption one image region, or every sample of a dataset.
    Caption(CaptionArgs),
    /// Score predictions against references.
    Evaluate(EvaluateArgs),
    /// Dataset statistics as JSON plus histogram plots.
    Stats(StatsArgs),
    /// Judge attribute captions with a chat-completion model.
    Judge(JudgeArgs),
    /// Write a synthetic dataset of colored blocks.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Training stage: 1, 2 or 3.
    #[arg(long)]
    pub stage: u8,
    /// Checkpoint of the previous stage (required for stages 2 and 3).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image to caption.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub image: Option<PathBuf>,
    /// Binary mask PNG (nonzero pixels are inside the region).
    #[arg(long, conflicts_with = "dataset")]
    pub mask: Option<PathBuf>,
    /// AARC, RDC or CGIC.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub task: Option<String>,
    /// Attribute name or number (1-18), for AARC.
    #[arg(long, conflicts_with = "dataset")]
    pub attribute: Option<String>,
    /// Caption every sample of this dataset JSONL instead.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Restrict dataset captioning to one split.
    #[arg(long, requires = "dataset")]
    pub split: Option<String>,
    /// Predictions JSONL destination for dataset captioning.
    #[arg(long, requires = "dataset")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL of {"id", "caption"}.
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSONL of {"id", "references": [...]} or dataset records.
    #[arg(long)]
    pub references: PathBuf,
    /// Comma-separated metric names; an empty string selects none.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Output directory for the report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset JSONL.
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// JSONL of {"id", "caption"}.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset JSONL with the reference captions, masks and images.
    #[arg(long)]
    pub dataset: PathBuf,
    /// `https://…/chat/completions` or `mock:Yes,No,…`.
    #[arg(long)]
    pub endpoint: String,
    /// Model name sent to the chat service.
    #[arg(long, default_value = "gpt-4o")]
    pub judge_model: String,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 3)]
    pub retries: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub records: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated side lengths to draw image sizes from.
    #[arg(long, default_value = "32,48,64")]
    pub sizes: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// A runtime failure after valid input (exit code 1).
#[derive(Debug)]
pub struct RuntimeFailure(pub String);

impl std::fmt::Display for RuntimeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RuntimeFailure {}

/// How a command that returned normally ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use maskcap::error::Error;
    for cause in err.chain() {
        if cause.is::<RuntimeFailure>() {
            return EXIT_PARTIAL;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence { .. } | Error::Transport(_) => EXIT_PARTIAL,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(&a),
        Command::Caption(a) => caption::run(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Stats(a) => stats::run(&a),
        Command::Judge(a) => judge::run(&a),
        Command::Synth(a) => synth::run(&a),
    };
    match result {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
