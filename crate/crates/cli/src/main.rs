//! `dgconv` command line.
//!
//! Exit codes: 0 success, 1 a check exceeded its tolerance, 2 usage error,
//! 3 input or runtime error.

mod check;
mod detect;
mod evaluate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dgconv::dgfilter::{DEFAULT_KERNEL, DEFAULT_MAX_DILATION, DEFAULT_SHIFT_POOL};

#[derive(Parser)]
#[command(name = "dgconv", version, about = "Depth-guided local convolution checks and detection-head tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the filtering operator against its oracles.
    Check {
        #[command(subcommand)]
        which: CheckCmd,
    },
    /// Time the naive and shift-based filtering paths.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
    /// Anchor templates and 3D priors.
    Anchors {
        #[command(subcommand)]
        which: AnchorsCmd,
    },
    /// Decode a network output map into KITTI detections.
    Decode(DecodeArgs),
    /// Loss breakdown of a prediction map against a target map.
    Loss(LossArgs),
    /// Average precision of KITTI predictions against ground truth.
    Eval(EvalArgs),
    /// Introspection of learned quantities.
    Inspect {
        #[command(subcommand)]
        which: InspectCmd,
    },
}

/// Filter hyperparameters shared by several subcommands.
#[derive(Args, Clone, Copy)]
pub struct OperatorArgs {
    /// Kernel size (odd).
    #[arg(long, default_value_t = DEFAULT_KERNEL, value_parser = odd)]
    pub k: usize,
    /// Maximum dilation rate.
    #[arg(long, default_value_t = DEFAULT_MAX_DILATION, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub d: usize,
    /// Channel shift-pooling count.
    #[arg(long = "n-f", default_value_t = DEFAULT_SHIFT_POOL, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub n_f: usize,
}

#[derive(Subcommand)]
pub enum CheckCmd {
    /// Shift-based depthwise filter vs the per-pixel oracle.
    Eq1 {
        #[arg(long)]
        seed: u64,
        /// Kernel size; random from {1, 3, 5} per case when omitted.
        #[arg(long, value_parser = odd)]
        k: Option<usize>,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 1e-12, value_parser = positive)]
        tol: f64,
    },
    /// Full adaptive operator vs the per-pixel oracle, and its d = 1 reduction.
    Eq2 {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 1e-12, value_parser = positive)]
        tol: f64,
    },
    /// Analytic backward pass vs central finite differences.
    Grad {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3, value_parser = odd)]
        k: usize,
        #[arg(long, default_value_t = 2, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
        d: usize,
        #[arg(long = "n-f", default_value_t = DEFAULT_SHIFT_POOL, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
        n_f: usize,
        /// Tensor extents `n,c,h,w`.
        #[arg(long, default_value = "1,2,6,6", value_parser = dims4)]
        dims: [usize; 4],
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6, value_parser = positive)]
        step: f64,
        #[arg(long, default_value_t = 1e-5, value_parser = positive)]
        tol: f64,
    },
}

#[derive(Subcommand)]
pub enum BenchCmd {
    /// Naive vs shift-based adaptive filtering.
    Dgf {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 64)]
        c: usize,
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 64)]
        w: usize,
        #[arg(long, default_value_t = dgconv::dgfilter::bench::DEFAULT_ITERATIONS, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(20..))]
        iters: usize,
        #[arg(long, default_value_t = dgconv::dgfilter::bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
pub enum AnchorsCmd {
    /// Fit 3D priors for the 36 templates from KITTI labels.
    Fit {
        /// Directory of label files.
        #[arg(long)]
        labels: PathBuf,
        /// Directory of calibration files with the same stems.
        #[arg(long)]
        calib: PathBuf,
        /// Classes whose boxes contribute, comma separated.
        #[arg(long, default_value = "Car", value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value_t = dgconv::anchors::DEFAULT_STRIDE)]
        stride: usize,
        #[arg(long, default_value_t = 1242)]
        width: usize,
        #[arg(long, default_value_t = 375)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
pub struct DecodeArgs {
    /// Output map `(n, n_a·(35 + n_c), h, w)` as DTEN.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub anchors: PathBuf,
    /// KITTI calibration file.
    #[arg(long)]
    pub calib: PathBuf,
    /// Class name for each score slot, comma separated.
    #[arg(long, default_value = "Background,Car,Pedestrian,Cyclist", value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Score slot treated as background; `none` to disable.
    #[arg(long, default_value = "0")]
    pub background: String,
    #[arg(long, default_value_t = dgconv::anchors::DEFAULT_STRIDE)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.5)]
    pub score_threshold: f64,
    /// 2D IoU above which a lower-scored box of the same class is dropped.
    #[arg(long, default_value_t = 0.4)]
    pub nms: f64,
    /// Hill-climb the pose so the projected box fits the 2D box.
    #[arg(long)]
    pub refine: bool,
    /// Batch item to decode.
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    /// Write labels here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct LossArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub anchors: PathBuf,
    /// Number of class score slots.
    #[arg(long = "n-c", default_value_t = 4)]
    pub n_c: usize,
    /// Background score slot.
    #[arg(long, default_value_t = 0)]
    pub background: usize,
    #[arg(long, default_value_t = dgconv::losses::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Compare each corner depth with the target's own corner depth.
    #[arg(long)]
    pub per_corner_depth: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    #[value(name = "2d")]
    Box2d,
    #[value(name = "3d")]
    Box3d,
    Both,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of ground-truth label files.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory of prediction label files; missing files count as empty.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value = "Car,Pedestrian,Cyclist", value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
    #[arg(long, value_enum, default_value_t = Metric::Both)]
    pub metric: Metric,
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand)]
pub enum InspectCmd {
    /// Distribution of dilation weights over rates.
    Dilation {
        /// Feature map as DTEN; weights are predicted from it with seeded parameters.
        #[arg(long, required_unless_present = "weights", conflicts_with = "weights", requires = "seed")]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        op: OperatorArgs,
        /// Precomputed weights `(n, c, d, 1)` as DTEN.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn odd(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|e| format!("{e}"))?;
    if k % 2 == 1 {
        Ok(k)
    } else {
        Err(format!("{k} is not odd"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

fn dims4(s: &str) -> Result<[usize; 4], String> {
    let v: Vec<usize> = s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| format!("{e}"))).collect::<Result<_, _>>()?;
    let dims: [usize; 4] = v.try_into().map_err(|_| "expected four comma-separated extents".to_string())?;
    if dims.contains(&0) {
        return Err("extents must be positive".into());
    }
    Ok(dims)
}

/// Result of a subcommand that may fail a check without erroring.
pub enum Status {
    Pass,
    CheckFailed(String),
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Check { which } => check::run(which),
        Command::Bench { which } => check::bench(which),
        Command::Anchors { which } => detect::anchors(which),
        Command::Decode(args) => detect::decode(args),
        Command::Loss(args) => detect::loss(args),
        Command::Eval(args) => evaluate::run(args),
        Command::Inspect { which } => evaluate::inspect(which),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed(name)) => {
            eprintln!("check failed: {name}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
