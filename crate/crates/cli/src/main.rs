//! `groundkit`: extract pairs, train, evaluate, synthesize and check gradients.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error,
//! 3 numeric failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }
}

impl From<groundkit::Error> for CliError {
    fn from(e: groundkit::Error) -> Self {
        let code = match e {
            groundkit::Error::NonFinite(_) => 3,
            _ => 2,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "groundkit",
    version,
    about = "Transcript-supervised recognition and grounding toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build entity/frame pairs from CTM transcripts.
    Extract(ExtractArgs),
    /// Train a classifier or grounding model.
    Train(TrainArgs),
    /// Evaluate checkpoints and print result tables.
    Eval(EvalArgs),
    /// Write a planted synthetic corpus.
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Time-aligned transcripts; may be repeated.
    #[arg(long, required = true, num_args = 1..)]
    pub ctm: Vec<PathBuf>,
    /// Entity vocabulary, one entity per line.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Irregular plurals, `plural singular` per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    /// Keep singular and plural spellings as separate classes.
    #[arg(long)]
    pub no_merge_plural: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Frequency table; printed to stdout when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTask {
    ClsSingle,
    ClsMulti,
    Mil,
    Recon,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: TrainTask,
    /// Frame vectors (classifiers) or proposal frames (grounding).
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Word vectors; required for grounding tasks.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Defaults: 1e-4 classifiers, 1e-5 MIL, 1e-3 reconstruction.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, env = "GROUNDKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Defaults: 256 classifiers, 512 MIL.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub embed_dim: usize,
    /// Defaults: 0.5 classifiers, 0.2 MIL.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Stop gradient through the reconstruction target.
    #[arg(long)]
    pub freeze_target: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTask {
    Cls,
    Ground,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: EvalTask,
    /// Checkpoints to evaluate; one table row each.
    #[arg(long, required = true, num_args = 1..)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Word vectors; required for grounding.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub topk: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.3,0.1")]
    pub iou: Vec<f64>,
    #[arg(long)]
    pub with_upperbound: bool,
    #[arg(long)]
    pub with_random: bool,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, env = "GROUNDKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Text report; metrics go to `<report>.jsonl`. Printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Grounding,
    Classification,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Grounding)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 20)]
    pub entities: usize,
    #[arg(long, default_value_t = 10)]
    pub proposals: usize,
    /// Frames per entity.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub frames_per_video: usize,
    #[arg(long, default_value_t = 64)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 640.0)]
    pub canvas_width: f64,
    #[arg(long, default_value_t = 480.0)]
    pub canvas_height: f64,
    #[arg(long, env = "GROUNDKIT_SEED", default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// linear, cls-single, cls-multi, cls (both), mil, recon or all.
    #[arg(long, default_value = "all")]
    pub task: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Relative tolerance; defaults to 1e-6 for linear and 1e-4 otherwise.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, env = "GROUNDKIT_SEED", default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("groundkit: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
