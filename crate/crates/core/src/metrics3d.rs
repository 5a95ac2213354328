//! Distance-thresholded fidelity of a reconstruction `R` against ground
//! truth `G`.
//!
//! Precision is the percentage of points of `R` whose nearest point in `G`
//! is closer than `d` (strict `<`); recall swaps the roles. The F-score is
//! their harmonic mean. Classification colors every point of a subject cloud
//! grey (correct), red (missing) or black (outlier) relative to a reference.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{NnIndex, PointCloud, Rgb};

/// Indoor default threshold, meters.
pub const INDOOR_THRESHOLD: f64 = 0.005;
/// Outdoor default threshold, meters.
pub const OUTDOOR_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot score an empty point cloud")]
    EmptyCloud,
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("thresholds must be a nonempty ascending list of positive values")]
    InvalidThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityScores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub threshold_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precisions: Vec<f64>,
    pub recalls: Vec<f64>,
}

impl PrCurve {
    /// CSV with header `threshold,precision,recall`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "threshold,precision,recall")?;
        for ((t, p), r) in self.thresholds.iter().zip(&self.precisions).zip(&self.recalls) {
            writeln!(w, "{t},{p},{r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub correct: usize,
    pub missing: usize,
    pub outlier: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedCloud {
    pub cloud: PointCloud,
    pub counts: ClassCounts,
}

fn check_inputs(a: &PointCloud, b: &PointCloud) -> Result<(), MetricsError> {
    if a.is_empty() || b.is_empty() {
        Err(MetricsError::EmptyCloud)
    } else {
        Ok(())
    }
}

fn check_threshold(d: f64) -> Result<(), MetricsError> {
    if d > 0.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(d))
    }
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>, MetricsError> {
    check_inputs(from, to)?;
    let index = NnIndex::build(to).map_err(|_| MetricsError::EmptyCloud)?;
    Ok(index.nearest_distances(from.points()))
}

fn percent_below(distances: &[f64], d: f64) -> f64 {
    let hits = distances.iter().filter(|&&x| x < d).count();
    100.0 * hits as f64 / distances.len() as f64
}

/// Percentage of `recon` points within `d` of `truth`.
pub fn precision(recon: &PointCloud, truth: &PointCloud, d: f64) -> Result<f64, MetricsError> {
    check_threshold(d)?;
    Ok(percent_below(&nearest_distances(recon, truth)?, d))
}

/// Percentage of `truth` points within `d` of `recon`.
pub fn recall(recon: &PointCloud, truth: &PointCloud, d: f64) -> Result<f64, MetricsError> {
    check_threshold(d)?;
    Ok(percent_below(&nearest_distances(truth, recon)?, d))
}

/// Harmonic mean of two percentages; 0 when both are 0.
pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn fidelity(recon: &PointCloud, truth: &PointCloud, d: f64) -> Result<FidelityScores, MetricsError> {
    let precision = precision(recon, truth, d)?;
    let recall = recall(recon, truth, d)?;
    Ok(FidelityScores {
        precision,
        recall,
        f_score: f_score(precision, recall),
        threshold_d: d,
    })
}

/// `count` thresholds spaced evenly in log10 between `lo` and `hi`, inclusive.
pub fn log_thresholds(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

/// Default PR grid: 100 log-spaced thresholds from 0.1 mm to 10 cm.
pub fn default_thresholds() -> Vec<f64> {
    log_thresholds(1e-4, 1e-1, 100)
}

/// Precision and recall at every threshold from one nearest-distance array
/// per direction.
pub fn pr_curve(
    recon: &PointCloud,
    truth: &PointCloud,
    thresholds: &[f64],
) -> Result<PrCurve, MetricsError> {
    if thresholds.is_empty()
        || thresholds.iter().any(|t| !(*t > 0.0))
        || thresholds.windows(2).any(|w| w[1] < w[0])
    {
        return Err(MetricsError::InvalidThresholds);
    }
    let mut forward = nearest_distances(recon, truth)?;
    let mut backward = nearest_distances(truth, recon)?;
    forward.sort_by(f64::total_cmp);
    backward.sort_by(f64::total_cmp);
    let sweep = |sorted: &[f64]| -> Vec<f64> {
        thresholds
            .iter()
            .map(|&d| 100.0 * sorted.partition_point(|&x| x < d) as f64 / sorted.len() as f64)
            .collect()
    };
    Ok(PrCurve {
        thresholds: thresholds.to_vec(),
        precisions: sweep(&forward),
        recalls: sweep(&backward),
    })
}

/// Population standard deviation.
pub(crate) fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Colors each `subject` point by its distance to `reference`:
/// grey if closer than `d`, black if at least `d` and farther than 3σ,
/// red otherwise. σ is the population standard deviation of all
/// subject→reference nearest distances.
pub fn classify(
    subject: &PointCloud,
    reference: &PointCloud,
    d: f64,
) -> Result<ClassifiedCloud, MetricsError> {
    check_threshold(d)?;
    let dist = nearest_distances(subject, reference)?;
    let cut = 3.0 * population_std(&dist);
    let mut counts = ClassCounts {
        correct: 0,
        missing: 0,
        outlier: 0,
    };
    let colors = dist
        .iter()
        .map(|&x| {
            if x < d {
                counts.correct += 1;
                Rgb::GREY
            } else if x > cut {
                counts.outlier += 1;
                Rgb::BLACK
            } else {
                counts.missing += 1;
                Rgb::RED
            }
        })
        .collect();
    let mut cloud = subject.clone();
    cloud
        .set_colors(colors)
        .expect("one color per subject point");
    Ok(ClassifiedCloud { cloud, counts })
}
