use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gprd", version, about = "Clutter removal for GPR B-scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render simulated scenes: raw, clutter-only and clutter-free scans.
    Simulate(SimulateArgs),
    /// Combine clutter-only scans with clutter-free scans from other scenes.
    Hybridize(HybridizeArgs),
    /// Train the network on `*_raw` / `*_gt` pairs and write a checkpoint.
    Train(TrainArgs),
    /// Remove clutter from every `*_raw` scan with one method.
    Declutter(DeclutterArgs),
    /// Score processed scans against ground truth and export heatmaps.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest from an earlier run; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output size, `HxW`. Scenes are rendered at this size.
    #[arg(long, value_name = "HxW")]
    pub size: Option<String>,
    /// Comma-separated surface kinds: flat, rough, grass, rough_water.
    #[arg(long)]
    pub surface: Option<String>,
    /// Comma-separated soil kinds.
    #[arg(long)]
    pub soil: Option<String>,
    /// Comma-separated target counts to draw from (0 to 3).
    #[arg(long)]
    pub targets: Option<String>,
    /// Comma-separated materials: pec, pvc.
    #[arg(long)]
    pub materials: Option<String>,
    #[arg(long)]
    pub roughness: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HybridizeArgs {
    /// Directory holding `*_bg` and `*_gt` scans.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory with the clutter-free scans, if not `--input`.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub per_clutter: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mix: f64,
    #[arg(long, value_name = "HxW")]
    pub size: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Combined,
    Mae,
    Mse,
    Msssim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Scaled,
    PaperGaussian,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `*_raw` / `*_gt` pairs.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = LossArg::Combined)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 40)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub base_width: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Scaled)]
    pub init: InitArg,
    /// Working size, `HxW`; both sides must be multiples of 16.
    #[arg(long, value_name = "HxW", default_value = "256x64")]
    pub size: String,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Meansub,
    Svd,
    Rpca,
    Crnet,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Meansub => "meansub",
            Method::Svd => "svd",
            Method::Rpca => "rpca",
            Method::Crnet => "crnet",
        }
    }
}

#[derive(Debug, Args)]
pub struct DeclutterArgs {
    /// A scan file, or a directory of `*_raw` scans.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Singular components removed by `svd`.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 3e-2)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// 1-based inclusive trace window `a:b` for `meansub`; whole scan if omitted.
    #[arg(long, value_name = "A:B")]
    pub window: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fraction of peak ground-truth amplitude marking the target region.
    #[arg(long, default_value_t = 0.2)]
    pub mask_frac: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory holding `*_raw` / `*_gt` pairs.
    #[arg(long)]
    pub input: PathBuf,
    /// Directories holding `<stem>_<method>` outputs; repeatable.
    #[arg(long, required = true)]
    pub processed: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub mask_frac: f64,
    #[arg(long)]
    pub no_heatmaps: bool,
}
