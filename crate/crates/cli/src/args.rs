use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "flowkd", version, about = "Knowledge distillation by information-flow modeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Supervised training of a teacher network with a classification head.
    TrainTeacher(TrainTeacherArgs),
    /// Probability-matching transfer from a teacher to an auxiliary network.
    TrainAux(TrainAuxArgs),
    /// Distil a student from a frozen teacher or auxiliary.
    Distill(DistillArgs),
    /// Retrieval and accuracy report of a checkpoint.
    Eval(EvalArgs),
    /// Per-layer mutual information and nearest-centroid accuracy.
    FlowReport(FlowReportArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by every subcommand. Flags override config-file values.
#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<subcommand>]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it [default: 1]
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Run in 32-bit floats instead of the 64-bit reference mode [default: off]
    #[arg(long)]
    pub f32: bool,
}

#[derive(Clone, Debug, Default, Args)]
pub struct TrainFlags {
    /// Training epochs [default: 25]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 128]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long, value_name = "RATE")]
    pub lr: Option<f64>,
    /// Write a checkpoint every N epochs into <out>/checkpoints; 0 disables [default: 0]
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct TeacherFlags {
    /// Frozen teacher checkpoint
    #[arg(long, value_name = "PATH", conflicts_with = "hog")]
    pub teacher: Option<PathBuf>,
    /// Use the handcrafted HoG extractor (2×2 cells, 9 bins) as the teacher [default: off]
    #[arg(long)]
    pub hog: bool,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Architecture: cnn1-l, cnn1, cnn1-a, cnn1-h, cnn1:<width> or mlp:<w1,w2,..> [default: cnn1-h]
    #[arg(long, value_name = "ARCH")]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainAuxArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub teacher: TeacherFlags,
    /// Auxiliary architecture [default: cnn1-a]
    #[arg(long, value_name = "ARCH")]
    pub arch: Option<String>,
    /// T-student kernel degree [default: 1]
    #[arg(long, value_name = "D")]
    pub degree: Option<u32>,
    /// Also write <out>/flow.csv for the trained auxiliary [default: off]
    #[arg(long)]
    pub flow_report: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub teacher: TeacherFlags,
    /// Student architecture [default: cnn1]
    #[arg(long, value_name = "ARCH")]
    pub arch: Option<String>,
    /// proposed, pkt_single, pkt_multi, hint, softlabel or none [default: proposed]
    #[arg(long, value_name = "METHOD")]
    pub method: Option<String>,
    /// Initial weight of the intermediate layer pairs [default: 100]
    #[arg(long, value_name = "A")]
    pub alpha_init: Option<f64>,
    /// Per-epoch decay of the intermediate weights, in (0, 1) [default: 0.7]
    #[arg(long, value_name = "G")]
    pub gamma: Option<f64>,
    /// T-student kernel degree [default: 1]
    #[arg(long, value_name = "D")]
    pub degree: Option<u32>,
    /// Contrastive margin [default: 1]
    #[arg(long, value_name = "M")]
    pub margin: Option<f64>,
    /// Weight of the contrastive term [default: 0.1]
    #[arg(long, value_name = "W")]
    pub contrastive_weight: Option<f64>,
    /// Soft-label temperature [default: 2]
    #[arg(long, value_name = "T")]
    pub temperature: Option<f64>,
    /// Layer pairing: one_to_one or flow [default: one_to_one]
    #[arg(long, value_name = "MODE")]
    pub pairing: Option<String>,
    /// Diagnostic mode: frozen student, fixed batch order, no updates [default: off]
    #[arg(long)]
    pub freeze_student: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// k of the top-k precision [default: 100]
    #[arg(long, value_name = "K")]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to analyse; give two (student first) to print the layer matching
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Vec<PathBuf>,
    /// Mutual-information kernel: cosine or t_student [default: t_student]
    #[arg(long, value_name = "KERNEL")]
    pub kernel: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random configurations per loss [default: 20]
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// Maximum relative error [default: 1e-4]
    #[arg(long, value_name = "TOL")]
    pub tol: Option<f64>,
}
