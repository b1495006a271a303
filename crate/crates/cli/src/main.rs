//! `avfuse`: data synthesis, SVR training, evaluation, grid search,
//! post-processing and fusion experiments from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use avfuse_core::{AffectDimension, Error, ErrorKind};
use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "AVFUSE_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "avfuse", version, about = "Continuous arousal/valence regression with SVR and multimodal fusion")]
pub struct Cli {
    /// More log output (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset with a manifest
    Synth(SynthArgs),
    /// Train one SVR on the train split of a manifest
    Train(TrainArgs),
    /// Predict a feature file with a trained model
    Predict(PredictArgs),
    /// Score a prediction file against a gold trace
    Eval(EvalArgs),
    /// Run the hyperparameter grid of an experiment config
    Grid(GridArgs),
    /// Tune or apply the post-processing chain to predictions
    Postprocess(PostprocessArgs),
    /// Run full experiments and write reports
    Experiment(ExperimentArgs),
    /// Tabulate and audit written reports
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for features, annotations and manifest.toml
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic spec (TOML); flags below override it
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_subjects: Option<usize>,
    #[arg(long)]
    pub dev_subjects: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Annotation lag in frames
    #[arg(long)]
    pub lag: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Modality to train on; repeat to fuse early in the given order
    #[arg(long = "modality", required = true)]
    pub modalities: Vec<String>,
    #[arg(long, default_value = "arousal")]
    pub dimension: AffectDimension,
    /// Annotation delay to compensate, in frames (default: 70 arousal, 50 valence)
    #[arg(long)]
    pub delay: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// `linear` or `rbf:<gamma>`
    #[arg(long, default_value = "linear")]
    pub kernel: String,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature file; repeat to fuse early in training order
    #[arg(long = "features", required = true)]
    pub features: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.04)]
    pub frame_period: f64,
    /// Prediction for invalid frames before the first valid one
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub fill_start: f64,
    /// Prediction file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Print every report field at full precision
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub dev_pred: PathBuf,
    #[arg(long)]
    pub dev_gold: PathBuf,
    #[arg(long)]
    pub train_pred: Option<PathBuf>,
    #[arg(long)]
    pub train_gold: Option<PathBuf>,
    /// Apply these parameters (TOML) instead of tuning
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Frames per subject in the dev files, comma separated
    #[arg(long, value_delimiter = ',')]
    pub segments: Vec<usize>,
    #[arg(long, default_value_t = 0.04)]
    pub frame_period: f64,
    /// Post-processed dev predictions to write
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the chosen parameters (TOML)
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config (TOML); repeat to run several
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (default: config output_dir, then $AVFUSE_OUTPUT_ROOT, then ./runs)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dimension: Option<AffectDimension>,
    /// none, early or late
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report record files
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// Recompute every stage CCC from the archived frames
    #[arg(long)]
    pub audit: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match cmd::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
