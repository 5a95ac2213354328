use std::path::{Path, PathBuf};

use recon_eval::earlystop::PlateauConfig;
use recon_eval::metrics2d::SsimParams;
use recon_eval::registration::IcpConfig;
use recon_eval::scalecal::CalibrationConfig;
use recon_eval::Aabb;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One JSON file describing a whole evaluation run. Every section is
/// optional; command-line flags override what is found here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub run: RunInfo,
    pub registration: RegistrationSection,
    pub metrics: MetricsSection,
    pub earlystop: EarlyStopSection,
    pub calibration: Option<CalibrationConfig>,
    /// Drop exact duplicate points from the ground truth on load.
    pub dedup_truth: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub recon: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub crop_box: Option<Aabb>,
    pub rendered_dir: Option<PathBuf>,
    pub reference_dir: Option<PathBuf>,
    pub rendered_features: Option<PathBuf>,
    pub reference_features: Option<PathBuf>,
    pub series: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub runs: Vec<PathBuf>,
}

/// Labels copied into the report row.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunInfo {
    pub scenario: Option<String>,
    pub model: Option<String>,
    pub iterations: Option<u64>,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    pub icp: IcpConfig,
    pub with_scale: bool,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        Self {
            icp: IcpConfig::with_voxel(0.01),
            with_scale: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub threshold: f64,
    pub pr_thresholds: Option<Vec<f64>>,
    pub ssim: SsimParams,
    pub max_intensity: f64,
    /// Pyramid depth for the built-in feature stand-in; `None` disables it.
    pub pseudo_lpips_levels: Option<usize>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            threshold: recon_eval::metrics3d::INDOOR_THRESHOLD,
            pr_thresholds: None,
            ssim: SsimParams::default(),
            max_intensity: 1.0,
            pseudo_lpips_levels: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopSection {
    pub plateau: PlateauConfig,
    pub full_iters: Option<u64>,
    pub interpolate: bool,
}

impl Default for EarlyStopSection {
    fn default() -> Self {
        Self {
            plateau: PlateauConfig::default(),
            full_iters: None,
            interpolate: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::Config(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag value if given, else the config value, else a config error naming `what`.
pub fn pick<T: Clone>(flag: Option<T>, config: &Option<T>, what: &str) -> Result<T, CliError> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::Config(format!("missing {what}")))
}

/// Like [`pick`], and the path must exist.
pub fn existing(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let path = pick(flag, config, what)?;
    if !path.exists() {
        return Err(CliError::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}
