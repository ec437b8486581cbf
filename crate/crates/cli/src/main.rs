mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rcsnet::analysis::AnchorMetric;
use rcsnet::eval::ApMode;

/// Reparameterized channel-shuffle detector toolkit: build, fuse, verify,
/// analyze, run and evaluate models on the CPU.
///
/// Exit status: 0 success, 1 verification or metric failure, 2 usage or
/// state error, 3 I/O or format error. RCSNET_THREADS caps worker threads.
#[derive(Debug, Parser)]
#[command(name = "rcsnet", version)]
pub struct Cli {
    /// Emit machine-readable CSV instead of text.
    #[arg(long, global = true)]
    pub csv: bool,

    #[command(subcommand)]
    pub command: Command,
}

/// Model source shared by most subcommands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model config (TOML). Defaults to the built-in nano config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Weight file. Without it a train-mode model is built from --seed.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for weight initialization and random inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ThresholdArgs {
    /// Minimum confidence kept before NMS.
    #[arg(long, default_value_t = rcsnet::detect::DEFAULT_CONF_THRESH)]
    pub conf: f32,
    /// IoU at or above which NMS suppresses a box.
    #[arg(long, default_value_t = rcsnet::detect::DEFAULT_IOU_THRESH)]
    pub iou: f32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Iou,
    Euclidean,
}

impl From<MetricArg> for AnchorMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Iou => AnchorMetric::Iou,
            MetricArg::Euclidean => AnchorMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApModeArg {
    /// 101-point interpolation.
    Interp101,
    /// Exact area under the precision envelope.
    AllPoint,
}

impl From<ApModeArg> for ApMode {
    fn from(m: ApModeArg) -> Self {
        match m {
            ApModeArg::Interp101 => ApMode::Interp101,
            ApModeArg::AllPoint => ApMode::AllPoint,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a seeded train-mode model and save its weights.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights_out: PathBuf,
    },
    /// Fold every multi-branch block of a train-mode model into one conv.
    Fuse {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        weights_in: PathBuf,
        #[arg(long)]
        weights_out: PathBuf,
    },
    /// Compare train-mode and deployed-mode outputs on random inputs.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        /// Deployed weights to compare against. Defaults to fusing in memory.
        #[arg(long)]
        deployed: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f32,
    },
    /// FLOPs and memory-access cost per layer.
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        /// Report the fused model instead of the train-mode one.
        #[arg(long)]
        deployed: bool,
        /// Cost of a single convolution: map size, kernel, input and output channels.
        #[arg(long, num_args = 4, value_names = ["M", "K", "C1", "C2"], conflicts_with = "paper_compare")]
        layer: Option<Vec<u64>>,
        /// RCS-OSA against ELAN at width C, map size M and depth N.
        #[arg(long, num_args = 3, value_names = ["C", "M", "N"])]
        paper_compare: Option<Vec<u64>>,
    },
    /// Fit anchor sizes to a directory of label files with K-means.
    Anchors {
        #[arg(long)]
        labels_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 640)]
        input_size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MetricArg::Iou)]
        metric: MetricArg,
    },
    /// Detect objects in one PPM/PGM image.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Precision, recall, AP50 and AP50:95 over an image and label corpus.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        images_dir: PathBuf,
        #[arg(long)]
        labels_dir: PathBuf,
        /// Score saved detection files (`<stem>.txt`) instead of running the model.
        #[arg(long)]
        predictions_dir: Option<PathBuf>,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long, value_enum, default_value_t = ApModeArg::Interp101)]
        ap_mode: ApModeArg,
        /// Also time the pipeline and report FPS.
        #[arg(long)]
        fps: bool,
        /// Exit 1 when AP50 falls below this value.
        #[arg(long)]
        min_ap50: Option<f64>,
    },
    /// Time the train-mode and deployed-mode pipelines.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        /// Images to time. Defaults to one seeded noise image.
        #[arg(long)]
        images_dir: Option<PathBuf>,
        #[arg(long, default_value_t = rcsnet::eval::bench::DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = rcsnet::eval::bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.code());
    }
    match commands::run(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
