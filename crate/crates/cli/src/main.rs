//! `actpred` command-line tool.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "actpred", version, about = "Online action prediction and visual force estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on one object of a manifest.
    Train(TrainArgs),
    /// Per-frame beliefs for a feature file, or a frame stream on standard input.
    Predict(PredictArgs),
    /// Leave-one-subject-out evaluation with curves, offsets, confusion and force tables.
    Eval(EvalArgs),
    /// Calibrate, filter and normalize a force recording.
    Forces(ForcesArgs),
    /// Write a seeded synthetic dataset with its manifest.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskArg {
    Action,
    Force,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Lstm,
    Hmm,
    Svm,
}

/// Overrides applied on top of the defaults or `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// TOML file with training settings (field names as in the config reference).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct NotchFlags {
    /// Mains frequency to remove from force recordings.
    #[arg(long, default_value_t = actpred::force::DEFAULT_NOTCH_HZ)]
    pub notch_freq: f64,
    #[arg(long, default_value_t = actpred::force::DEFAULT_NOTCH_Q)]
    pub notch_q: f64,
    /// Skip notch filtering.
    #[arg(long)]
    pub no_notch: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineFlags {
    /// Sliding-window length of the SVM baseline.
    #[arg(long, default_value_t = actpred::baselines::DEFAULT_WINDOW)]
    pub window: usize,
    /// PCA width for both baselines (reduced to what the data supports).
    #[arg(long, default_value_t = actpred::baselines::DEFAULT_PCA_DIM)]
    pub pca_dim: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Object to train on; required when the manifest has several.
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long, value_enum, default_value_t = TaskArg::Action)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Lstm)]
    pub method: MethodArg,
    /// Per-epoch log; defaults to the model path with `.log.csv` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub notch: NotchFlags,
    #[command(flatten)]
    pub baseline: BaselineFlags,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature file; omit or pass `-` to read a frame stream from standard input.
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the CSV tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Frame offsets from the touching point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = actpred::data::eval::DEFAULT_OFFSETS)]
    pub offsets: Vec<i64>,
    #[arg(long, default_value_t = actpred::data::eval::DEFAULT_L_PRE)]
    pub lpre: usize,
    #[arg(long, default_value_t = actpred::data::eval::DEFAULT_L_POST)]
    pub lpost: usize,
    /// Skip the HMM and SVM baselines.
    #[arg(long)]
    pub no_baselines: bool,
    /// Skip force regression and fusion.
    #[arg(long)]
    pub no_forces: bool,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub notch: NotchFlags,
    #[command(flatten)]
    pub baseline: BaselineFlags,
}

#[derive(Args, Debug)]
pub struct ForcesArgs {
    /// Force recording (`FREC`).
    pub input: PathBuf,
    /// Output CSV, one row per frame.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep Newtons instead of normalizing to [0, 1].
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub notch: NotchFlags,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 5)]
    pub subjects: usize,
    #[arg(long, default_value_t = 24)]
    pub t_min: usize,
    #[arg(long, default_value_t = 32)]
    pub t_max: usize,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// Number of force channels to generate; 0 for none.
    #[arg(long, default_value_t = 4)]
    pub forces: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
