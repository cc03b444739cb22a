use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "mvprobe", version, about = "Multi-view probing of weight matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (WSDS + JSON manifest).
    Gen(GenArgs),
    /// Train a model and write an MVPB checkpoint plus a JSONL log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and write a JSON report.
    Eval(EvalArgs),
    /// Run a numerical verification suite.
    Verify(VerifyArgs),
    /// Train one model per branch set (and standardization setting) and tabulate.
    Ablate(AblateArgs),
    /// Compare analytic FLOPs and wall time of associative vs naive Gram evaluation.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// JSON dataset spec.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Model and optimizer overrides; flags win over `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Flat JSON file with any of the override keys below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "d-h")]
    pub d_h: Option<usize>,
    /// Comma-separated branch tokens, e.g. `xu,xtv,xxtw,xtxz`.
    #[arg(long)]
    pub branches: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    /// Comma-separated branches whose probe banks are not updated.
    #[arg(long)]
    pub freeze: Option<String>,
    /// Load the `xu` bank from the dataset manifest's frozen probes and freeze it.
    #[arg(long)]
    pub manifest_xu: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL training log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset part to train on: all, train, val or test.
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated tasks: classification, knn, occ, ovl, auroc, rescue.
    #[arg(long)]
    pub tasks: String,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value = "1,5")]
    pub knn_k: String,
    #[arg(long, default_value = "1,5")]
    pub occ_k: String,
    /// Baseline checkpoint for the rescue task.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Optional CSV dump of positive/negative pair similarities.
    #[arg(long)]
    pub similarity_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// thm1, thm2, thm3, corollary, domination, gradcheck or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    /// Trials per suite (default: the suite's own count).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Branch sets separated by `;`, each a comma list, e.g. `xu;xu,xtv`.
    #[arg(long)]
    pub branch_sets: String,
    /// Standardization settings to fan out over: on, off or both.
    #[arg(long, default_value = "on")]
    pub std: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub r: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(value) = std::env::var("MVPROBE_THREADS") {
        let threads: usize = value
            .parse()
            .map_err(|_| CliError::Validation(format!("MVPROBE_THREADS must be a positive integer, got {value:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|_| match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Profile(a) => commands::profile(&a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
