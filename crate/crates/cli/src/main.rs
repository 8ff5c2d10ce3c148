mod commands;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fetalnet_core::{ClassLabel, Error};

#[derive(Parser)]
#[command(name = "fetalnet", version, about = "Fetal ultrasound segmentation, classification and biometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML or JSON config; writes a checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest with ground truth.
    Eval(EvalArgs),
    /// Predict labels, measurements and overlays for one clip directory.
    Infer(InferArgs),
    /// Measure a mask or probability map, or every ground-truth mask of a manifest.
    Measure(MeasureArgs),
    /// Train and evaluate the five component variants on shared data.
    Ablate(AblateArgs),
    /// Generate a synthetic phantom suite.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for the checkpoint and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Reference measurements keyed by frame id. Defaults to the manifest's
    /// sibling `ground_truth.json` when present; otherwise the ground-truth
    /// masks are measured.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Directory for report.json, report.csv and frames.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub letterbox: bool,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of PNG frames, processed in file-name order.
    #[arg(long)]
    pub clip_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixel spacing in mm; otherwise read from `clip.json` in the clip directory.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Ground-truth masks with the same file names, drawn in red.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Class to measure with when the checkpoint has no classification branch.
    #[arg(long)]
    pub label: Option<ClassLabel>,
}

#[derive(Args)]
pub struct MeasureArgs {
    /// Mask or probability map (PNG).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub mask: Option<PathBuf>,
    #[arg(long, requires = "mask")]
    pub label: Option<ClassLabel>,
    #[arg(long, requires = "mask")]
    pub spacing: Option<f64>,
    /// Measure every ground-truth mask in a manifest instead.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = fetalnet_core::geometry::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Write an overlay of the fitted shape (single mask only).
    #[arg(long, requires = "mask")]
    pub overlay: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for ablation.csv and ablation.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub clip_len: usize,
    /// Speckle strength σ.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Relative class weights head,abdomen,femur,background.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub mix: Option<Vec<f64>>,
}

/// 2 configuration, 3 data, 4 checkpoint mismatch.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::CheckpointMismatch(_)) => 4,
        Some(_) => 3,
        None if err.chain().any(|e| e.is::<std::io::Error>() || e.is::<csv::Error>()) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Measure(a) => commands::measure(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
