//! `fainr`: synthesize ensembles, train, evaluate, analyze and serve FA-INR
//! surrogates.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{float_list, index_list, List};

#[derive(Parser, Debug)]
#[command(name = "fainr", version, about = "Feature-adaptive INR surrogate pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic ensemble dataset.
    Synth(SynthArgs),
    /// Train an FA-INR model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on dataset members.
    Eval(EvalArgs),
    /// Expert maps, per-expert frequency and sensitivity curves.
    Analyze(AnalyzeArgs),
    /// Run the HTTP exploration service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Lattice points per axis, e.g. `32` or `32,32,16`.
    #[arg(long, default_value = "32")]
    pub resolution: String,
    #[arg(long, default_value_t = 6)]
    pub blobs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Parameter ranges as `lo:hi` pairs separated by commas.
    #[arg(long, default_value = "1:3,0:0.5")]
    pub param_ranges: String,
    /// Grid members per parameter axis.
    #[arg(long, default_value = "5,4")]
    pub grid: String,
    /// Extra members at random parameters.
    #[arg(long, default_value_t = 5)]
    pub random: usize,
    /// Fraction of each range kept clear of random members at both ends.
    #[arg(long, default_value_t = 0.1)]
    pub random_margin: f64,
    #[arg(long, default_value_t = 11)]
    pub random_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, statistics, log and report.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration with `model`, `train` and `data` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub slots: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seeds both initialization and batch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub validation_interval: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    /// Member indices to fit, e.g. `0-19`.
    #[arg(long, value_parser = index_list)]
    pub train_members: Option<List<usize>>,
    #[arg(long, value_parser = index_list)]
    pub validation_members: Option<List<usize>>,
    /// Fraction of coordinates used for training.
    #[arg(long)]
    pub coord_split: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ModelInputs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Normalization statistics; defaults to `stats.json` beside the checkpoint.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Members to score (default: all).
    #[arg(long, value_parser = index_list)]
    pub members: Option<List<usize>>,
    /// Also score trained and held-out coordinates of this split separately.
    #[arg(long)]
    pub coord_split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub out: PathBuf,
    /// Parameters to sweep (default: all).
    #[arg(long, value_parser = index_list)]
    pub params: Option<List<usize>>,
    /// `all` or `expert:<id>`.
    #[arg(long, default_value = "all")]
    pub region: String,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    /// Sweep interval `lo,hi` in physical units (default: trained range).
    #[arg(long, value_parser = float_list)]
    pub range: Option<List<f64>>,
    /// Physical values of the other parameters (default: range midpoints).
    #[arg(long, value_parser = float_list)]
    pub base: Option<List<f64>>,
    /// Member whose ground truth feeds the frequency table.
    #[arg(long, default_value_t = 0)]
    pub member: usize,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 64)]
    pub max_sweep_steps: usize,
    /// CORS origin to allow; repeat for several (default: any).
    #[arg(long)]
    pub allow_origin: Vec<String>,
    /// Ignore member fields, as if no ground truth were available.
    #[arg(long)]
    pub no_ground_truth: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
