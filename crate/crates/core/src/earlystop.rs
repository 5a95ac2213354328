//! Plateau-based early stopping over per-checkpoint metric series.
//!
//! Per-image metric values are averaged per checkpoint, optionally
//! resampled onto a uniform iteration grid, and scanned for the first index
//! `i` at which the last `C` values differ pairwise-consecutively by less
//! than `θ`. The scan needs a full window, so the earliest possible plateau
//! is index `C − 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EarlyStopError {
    #[error("checkpoint at iteration {0} has no image values")]
    EmptyCheckpoint(u64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no grid point with step {step} falls inside [{first}, {last}]")]
    EmptyGrid { step: u64, first: u64, last: u64 },
    #[error("iterations must be strictly ascending (saw {prev} then {next})")]
    NotAscending { prev: u64, next: u64 },
    #[error("non-finite value at iteration {0}")]
    NonFinite(u64),
    #[error("invalid plateau configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: u64,
    pub value: f64,
    pub origin: Origin,
}

/// Metric values at strictly ascending iterations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSeries {
    samples: Vec<Sample>,
}

impl MetricSeries {
    pub fn new(samples: Vec<Sample>) -> Result<Self, EarlyStopError> {
        for s in &samples {
            if !s.value.is_finite() {
                return Err(EarlyStopError::NonFinite(s.iteration));
            }
        }
        for w in samples.windows(2) {
            if w[1].iteration <= w[0].iteration {
                return Err(EarlyStopError::NotAscending {
                    prev: w[0].iteration,
                    next: w[1].iteration,
                });
            }
        }
        Ok(Self { samples })
    }

    /// Series of `original` samples from `(iteration, value)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self, EarlyStopError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(iteration, value)| Sample {
                    iteration,
                    value,
                    origin: Origin::Original,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    /// Consecutive differences must stay strictly below this.
    pub theta: f64,
    /// Number of consecutive values forming a plateau window.
    pub consistency_len: usize,
    pub grid_step: u64,
    pub grid_end: u64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            theta: 0.005,
            consistency_len: 6,
            grid_step: 1000,
            grid_end: 60000,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<(), EarlyStopError> {
        if !(self.theta > 0.0) {
            return Err(EarlyStopError::InvalidConfig(format!("theta = {}", self.theta)));
        }
        if self.consistency_len < 2 {
            return Err(EarlyStopError::InvalidConfig(format!(
                "consistency length = {}",
                self.consistency_len
            )));
        }
        if self.grid_step == 0 {
            return Err(EarlyStopError::InvalidConfig("grid_step = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauStatus {
    Plateau,
    NoPlateau,
    Insufficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlateauResult {
    pub index: usize,
    pub iteration: u64,
    pub status: PlateauStatus,
}

/// Arithmetic mean of the per-image values of every checkpoint.
pub fn average_series(checkpoints: &[(u64, Vec<f64>)]) -> Result<MetricSeries, EarlyStopError> {
    let mut pairs = Vec::with_capacity(checkpoints.len());
    for (iteration, values) in checkpoints {
        if values.is_empty() {
            return Err(EarlyStopError::EmptyCheckpoint(*iteration));
        }
        pairs.push((*iteration, values.iter().sum::<f64>() / values.len() as f64));
    }
    MetricSeries::from_pairs(pairs)
}

/// Linear resampling at every multiple of `grid_step` inside
/// `[first, min(last, grid_end)]`. Grid points that hit an original
/// iteration keep its value and `original` tag.
pub fn interpolate_series(
    s: &MetricSeries,
    grid_step: u64,
    grid_end: u64,
) -> Result<MetricSeries, EarlyStopError> {
    if grid_step == 0 {
        return Err(EarlyStopError::InvalidConfig("grid_step = 0".into()));
    }
    let samples = s.samples();
    if samples.len() < 2 {
        return Err(EarlyStopError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let first = samples[0].iteration;
    let last = samples[samples.len() - 1].iteration.min(grid_end);
    let start = first.div_ceil(grid_step) * grid_step;
    if start > last {
        return Err(EarlyStopError::EmptyGrid {
            step: grid_step,
            first,
            last,
        });
    }

    let mut out = Vec::new();
    let mut seg = 0;
    let mut it = start;
    while it <= last {
        while samples[seg + 1].iteration < it {
            seg += 1;
        }
        let (a, b) = (&samples[seg], &samples[seg + 1]);
        let sample = if it == a.iteration {
            *a
        } else if it == b.iteration {
            *b
        } else {
            let t = (it - a.iteration) as f64 / (b.iteration - a.iteration) as f64;
            Sample {
                iteration: it,
                value: a.value + t * (b.value - a.value),
                origin: Origin::Interpolated,
            }
        };
        out.push(sample);
        it = match it.checked_add(grid_step) {
            Some(n) => n,
            None => break,
        };
    }
    MetricSeries::new(out)
}

/// First index `i ≥ C − 1` whose trailing `C − 1` consecutive differences
/// are all below `θ`. Fewer than `C` samples gives index 0 with status
/// `Insufficient`; no such `i` gives the last index with `NoPlateau`.
pub fn detect_plateau(s: &MetricSeries, cfg: &PlateauConfig) -> Result<PlateauResult, EarlyStopError> {
    cfg.validate()?;
    let samples = s.samples();
    if samples.is_empty() {
        return Err(EarlyStopError::TooFewSamples { needed: 1, got: 0 });
    }
    let c = cfg.consistency_len;
    let result = |index: usize, status| PlateauResult {
        index,
        iteration: samples[index].iteration,
        status,
    };
    if samples.len() < c {
        return Ok(result(0, PlateauStatus::Insufficient));
    }
    // Length of the current run of small consecutive differences ending at i.
    let mut run = 0;
    for i in 1..samples.len() {
        if (samples[i].value - samples[i - 1].value).abs() < cfg.theta {
            run += 1;
        } else {
            run = 0;
        }
        if run >= c - 1 {
            return Ok(result(i, PlateauStatus::Plateau));
        }
    }
    Ok(result(samples.len() - 1, PlateauStatus::NoPlateau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopReport {
    pub stop_iteration: u64,
    pub status: PlateauStatus,
    pub time_saved_fraction: f64,
}

/// Turns a plateau into a stopping recommendation. With too little data no
/// stop is recommended and the report points at `full_iters`.
pub fn early_stop_report(
    s: &MetricSeries,
    cfg: &PlateauConfig,
    full_iters: u64,
) -> Result<EarlyStopReport, EarlyStopError> {
    let plateau = detect_plateau(s, cfg)?;
    let last = s.samples().last().map(|x| x.iteration).unwrap_or(0);
    if full_iters == 0 || full_iters < last {
        return Err(EarlyStopError::InvalidConfig(format!(
            "full_iters {full_iters} is below the last sample iteration {last}"
        )));
    }
    let stop_iteration = match plateau.status {
        PlateauStatus::Insufficient => full_iters,
        _ => plateau.iteration,
    };
    Ok(EarlyStopReport {
        stop_iteration,
        status: plateau.status,
        time_saved_fraction: 1.0 - stop_iteration as f64 / full_iters as f64,
    })
}
