use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

#[derive(Parser, Debug)]
#[command(name = "mfid", version, about = "Pairwise-KL metric learning and biometric identification experiments")]
struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation trials
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Gaussian-cluster dataset
    Synth(SynthArgs),
    /// Train one embedding head per split
    Train(TrainArgs),
    /// Evaluate trained heads on their test splits
    Eval(EvalArgs),
    /// Evaluate a trained head on another dataset
    Transfer(TransferArgs),
    /// Score detections against ground truth
    Detmetrics(DetArgs),
    /// Paired comparison of two objectives over several seeds
    Ablate(AblateArgs),
    /// PCA + logistic regression baseline
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub identities: Option<usize>,
    #[arg(long)]
    pub per_id: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Centers are uniform in [-scale, scale]
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// csv or binary
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    /// disjoint or stratified
    #[arg(long)]
    pub split_mode: Option<String>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// resample or partition (stratified mode only)
    #[arg(long)]
    pub stratified_mode: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    /// standard (50 epochs), combined (60) or small (30)
    #[arg(long)]
    pub preset: Option<String>,
    /// linear or mlp1
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// mfid or cross_entropy
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<usize>,
    #[arg(long)]
    pub batch_pairs: Option<usize>,
    #[arg(long)]
    pub similar_fraction: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub similar_weight: Option<f64>,
    #[arg(long)]
    pub dissimilar_weight: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrialFlags {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub far: Option<f64>,
    /// Gallery images per identity
    #[arg(long)]
    pub gallery: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    /// fixed or per-trial
    #[arg(long)]
    pub distractor_mode: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory written by `train` (defaults to --out)
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Comma list of classification, closed, open, verif
    #[arg(long)]
    pub protocols: Option<String>,
    #[command(flatten)]
    pub trial: TrialFlags,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Checkpoint trained on the source dataset
    #[arg(long)]
    pub model: PathBuf,
    /// Target dataset
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub source_name: Option<String>,
    #[arg(long)]
    pub target_name: Option<String>,
    /// Use a saved split of the target: directory written by `train`
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
    /// Split index inside --split-dir
    #[arg(long, default_value_t = 0)]
    pub split: usize,
    /// Otherwise draw an identity-disjoint test side with this fraction
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    pub trial: TrialFlags,
}

#[derive(Args, Debug)]
pub struct DetArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub iou: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of paired seeds
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Objective of the first arm
    #[arg(long)]
    pub arm_a: Option<String>,
    /// Objective of the second arm
    #[arg(long)]
    pub arm_b: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub trial: TrialFlags,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Fraction of variance kept by PCA (e.g. 0.99 or 0.95)
    #[arg(long)]
    pub energy: Option<f64>,
    /// Comma list of C values; default is the eleven decades 1e-5..1e5
    #[arg(long)]
    pub c_grid: Option<String>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
}

pub struct Globals {
    pub file: config::FileConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let g = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("mfid-out")),
        jobs: cli.jobs.or(file.jobs).unwrap_or(1).max(1),
        file,
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&g, a),
        Command::Train(a) => commands::train(&g, a),
        Command::Eval(a) => commands::eval(&g, a),
        Command::Transfer(a) => commands::transfer(&g, a),
        Command::Detmetrics(a) => commands::detmetrics(&g, a),
        Command::Ablate(a) => commands::ablate(&g, a),
        Command::Baseline(a) => commands::baseline(&g, a),
    }
}

fn error_code(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<mfid_core::Error>())
        .map(|e| e.code())
        .or_else(|| {
            err.chain()
                .any(|e| e.downcast_ref::<toml::de::Error>().is_some())
                .then_some("config")
        })
        .unwrap_or("cli")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", error_code(&e));
            ExitCode::FAILURE
        }
    }
}
