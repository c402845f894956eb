mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Gesture synthesis pipeline: synthetic corpora, preprocessing, LSTM
/// training and evaluation, prediction and retargeting.
#[derive(Debug, Parser)]
#[command(name = "gesture", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for corpus generation, splitting, embeddings and weight init
    /// [default: 7, or the config file's seed for train]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-identical results run to run [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print machine-readable JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON config file (train: TrainConfig keys, compare: ComparisonConfig keys); flags win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Progress on stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic conversation corpus
    SynthData(commands::SynthArgs),
    /// Rotate, normalize and pack a corpus; report the shoulder hypothesis
    Preprocess(commands::PreprocessArgs),
    /// Check a corpus or a keypoint file and report rejected clips
    Validate(commands::ValidateArgs),
    /// Train a listening or speaking model on a prepared dataset
    Train(commands::TrainArgs),
    /// Compute L and S_C of a checkpoint on one split
    Eval(commands::EvalArgs),
    /// Predict a motion sequence from text (and speaker motion)
    Predict(commands::PredictArgs),
    /// Turn predictions or keypoint frames into an animation track
    Retarget(commands::RetargetArgs),
    /// Compare backpropagated gradients with finite differences
    Gradcheck(commands::GradcheckArgs),
    /// Normalization comparison and learning-target swap on synthetic data
    Compare(commands::CompareArgs),
}

/// Errors caused by invalid arguments rather than failing work; these exit
/// with code 2 like clap's own parse errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Marks a run that completed but whose check failed (gradcheck).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
