//! Command-line pipeline: register, score, pick a stopping point, calibrate
//! scale and tabulate runs.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use recon_eval::earlystop::EarlyStopError;
use recon_eval::metrics2d::ImageError;
use recon_eval::metrics3d::MetricsError;
use recon_eval::pointcloud::{CloudError, PlyError};
use recon_eval::registration::RegistrationError;
use recon_eval::scalecal::ScaleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Image(ImageError),
    #[error("image {0} has no counterpart in the other directory")]
    UnpairedImage(String),
    #[error(transparent)]
    EarlyStop(#[from] EarlyStopError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error("need at least 2 runs for correlations, got {0}")]
    TooFewRuns(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code; one per error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Format(_) => 4,
            CliError::Cloud(_) => 5,
            CliError::Registration(_) => 6,
            CliError::Metrics(_) | CliError::Image(_) => 7,
            CliError::UnpairedImage(_) => 8,
            CliError::EarlyStop(_) => 9,
            CliError::Scale(_) => 10,
            CliError::TooFewRuns(_) => 11,
        }
    }
}

impl From<PlyError> for CliError {
    fn from(e: PlyError) -> Self {
        match e {
            PlyError::Io(io) => CliError::Io {
                path: PathBuf::new(),
                source: io,
            },
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Decode(m) | ImageError::MalformedFeatures(m) => CliError::Format(m),
            ImageError::Io(io) => CliError::Io {
                path: PathBuf::new(),
                source: io,
            },
            other => CliError::Image(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "recon-eval", version, about = "Evaluate reconstructed point clouds and renders")]
pub struct Cli {
    /// Pipeline config (JSON); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files; created if missing.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Landmark alignment, crop and ICP of a reconstruction onto the ground truth.
    Register(RegisterArgs),
    /// Precision, recall, F-score, PR curve and classified clouds.
    Eval3d(Eval3dArgs),
    /// PSNR, SSIM and LPIPS over paired image directories.
    Eval2d(Eval2dArgs),
    /// Plateau-based stopping point from a metric series.
    Earlystop(EarlyStopArgs),
    /// Metric scale from calibration spheres, plus height.
    Calibrate(CalibrateArgs),
    /// Merge run reports into one table with metric/F1 correlations.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub recon: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long)]
    pub voxel: Option<f64>,
    #[arg(long)]
    pub max_correspondence: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// 1 or 3 ICP stages.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["1", "3"]))]
    pub stages: Option<String>,
    /// Estimate a rigid landmark transform instead of a similarity.
    #[arg(long)]
    pub rigid: bool,
    /// Drop ground-truth points with identical coordinates.
    #[arg(long)]
    pub dedup_truth: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Scene {
    Indoor,
    Outdoor,
}

#[derive(Debug, Args)]
pub struct Eval3dArgs {
    #[arg(long)]
    pub recon: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Distance threshold in meters.
    #[arg(long, conflicts_with = "scene")]
    pub threshold: Option<f64>,
    /// Use the indoor (0.005 m) or outdoor (0.01 m) threshold.
    #[arg(long, value_enum)]
    pub scene: Option<Scene>,
    /// Drop ground-truth points with identical coordinates.
    #[arg(long)]
    pub dedup_truth: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Training time to record in the report, seconds.
    #[arg(long)]
    pub wall_time: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Eval2dArgs {
    #[arg(long)]
    pub rendered: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Directory of `<stem>.fstk` feature stacks for the rendered images.
    #[arg(long, requires = "reference_features")]
    pub rendered_features: Option<PathBuf>,
    #[arg(long, requires = "rendered_features")]
    pub reference_features: Option<PathBuf>,
    /// Compute LPIPS on the built-in pyramid features with this many levels.
    #[arg(long)]
    pub pseudo_lpips: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EarlyStopArgs {
    /// CSV with `iteration,value` or `iteration,image_id,value`.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub consistency: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<u64>,
    #[arg(long)]
    pub grid_end: Option<u64>,
    /// Length of full training (default: grid end).
    #[arg(long)]
    pub full_iters: Option<u64>,
    /// Detect on the raw checkpoints instead of the interpolated grid.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub recon: Option<PathBuf>,
    /// Calibration JSON (overrides the config's `calibration` section).
    #[arg(long)]
    pub spheres: Option<PathBuf>,
    /// Detect spheres with RANSAC inside each capture ball.
    #[arg(long)]
    pub ransac: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, each holding a `report.json`.
    pub runs: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let config = match &cli.config {
        Some(path) => config::PipelineConfig::load(path)?,
        None => config::PipelineConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let ctx = commands::Context {
        config,
        out_dir: cli.out_dir,
        seed: cli.seed,
    };
    match cli.command {
        Command::Register(a) => commands::register(&ctx, a),
        Command::Eval3d(a) => commands::eval3d(&ctx, a),
        Command::Eval2d(a) => commands::eval2d(&ctx, a),
        Command::Earlystop(a) => commands::earlystop(&ctx, a),
        Command::Calibrate(a) => commands::calibrate(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
    }
}
