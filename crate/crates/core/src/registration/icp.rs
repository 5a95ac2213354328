use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::landmark::umeyama;
use super::{apply_transform, RegistrationError, SimilarityTransform};
use crate::pointcloud::{voxel_downsample, NnIndex, Point3, PointCloud};

/// Single long stage (default) or the coarse/fine/coarse three-stage schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IcpStages {
    #[default]
    Single,
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    /// Voxel edge used to downsample both clouds, meters.
    pub voxel: f64,
    /// Pairs farther apart than this are discarded, meters.
    pub max_correspondence_dist: f64,
    pub max_iterations: usize,
    /// Stop once fitness and inlier RMSE both change by less than this.
    pub convergence_eps: f64,
    #[serde(default)]
    pub stages: IcpStages,
}

impl IcpConfig {
    /// Defaults derived from the voxel size: threshold 3× voxel, 300
    /// iterations in one stage, eps 1e-6.
    pub fn with_voxel(voxel: f64) -> Self {
        Self {
            voxel,
            max_correspondence_dist: 3.0 * voxel,
            max_iterations: 300,
            convergence_eps: 1e-6,
            stages: IcpStages::Single,
        }
    }

    pub fn validate(&self) -> Result<(), RegistrationError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.voxel) {
            return Err(RegistrationError::InvalidConfig(format!("voxel = {}", self.voxel)));
        }
        if !positive(self.max_correspondence_dist) {
            return Err(RegistrationError::InvalidConfig(format!(
                "max_correspondence_dist = {}",
                self.max_correspondence_dist
            )));
        }
        if self.max_iterations == 0 {
            return Err(RegistrationError::InvalidConfig("max_iterations = 0".into()));
        }
        if !positive(self.convergence_eps) {
            return Err(RegistrationError::InvalidConfig(format!(
                "convergence_eps = {}",
                self.convergence_eps
            )));
        }
        Ok(())
    }

    /// (voxel, max correspondence distance, iterations) per stage.
    fn schedule(&self) -> Vec<(f64, f64, usize)> {
        let (v, d, n) = (self.voxel, self.max_correspondence_dist, self.max_iterations);
        match self.stages {
            IcpStages::Single => vec![(v, d, n)],
            IcpStages::Three => {
                let per = (n / 10).max(1);
                vec![(v, d, per), (v / 2.0, d / 2.0, per), (v, d / 2.0, per)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    #[serde(skip)]
    pub transform: SimilarityTransform,
    /// Fraction of downsampled source points with a partner within the threshold.
    pub fitness: f64,
    /// RMS distance over those pairs, meters.
    pub inlier_rmse: f64,
    pub iterations_run: usize,
}

struct Matches {
    source: Vec<Point3>,
    target: Vec<Point3>,
    fitness: f64,
    rmse: f64,
}

fn correspond(
    moved: &[Point3],
    index: &NnIndex,
    max_dist: f64,
) -> Matches {
    let max2 = max_dist * max_dist;
    let pairs: Vec<(Point3, Point3, f64)> = moved
        .par_iter()
        .filter_map(|p| {
            let nn = index.nearest(p);
            (nn.dist2 <= max2).then(|| (*p, *index.point(nn.index), nn.dist2))
        })
        .collect();
    let n = pairs.len();
    let sum2: f64 = pairs.iter().map(|x| x.2).sum();
    let (source, target) = pairs.into_iter().map(|(s, t, _)| (s, t)).unzip();
    Matches {
        source,
        target,
        fitness: n as f64 / moved.len() as f64,
        rmse: if n > 0 { (sum2 / n as f64).sqrt() } else { 0.0 },
    }
}

/// Point-to-point ICP of `source` onto `target`, starting from `init`.
///
/// Both clouds are voxel downsampled (the source after applying `init`, so
/// the voxel is in target units). Each iteration pairs every source point
/// with its nearest target point, drops pairs beyond the threshold and
/// composes the closed-form rigid fit of the remaining pairs. The returned
/// transform includes `init` and keeps its scale.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    init: &SimilarityTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult, RegistrationError> {
    cfg.validate()?;
    source.ensure_nonempty()?;
    target.ensure_nonempty()?;

    let initial = apply_transform(source, init);
    let mut delta = SimilarityTransform::identity();
    let mut iterations_run = 0;
    let mut last = None;

    for (stage, (voxel, max_dist, iterations)) in cfg.schedule().into_iter().enumerate() {
        let src = voxel_downsample(&initial, voxel)?;
        let dst = voxel_downsample(target, voxel)?;
        let index = NnIndex::build(&dst)?;
        let base = src.points();
        let moved = |t: &SimilarityTransform| -> Vec<Point3> {
            base.iter().map(|p| t.apply(p)).collect()
        };

        let mut current = correspond(&moved(&delta), &index, max_dist);
        if stage == 0 && current.source.is_empty() {
            return Err(RegistrationError::NoCorrespondences { max_dist });
        }
        for _ in 0..iterations {
            if current.source.len() < 3 {
                break;
            }
            let Ok(step) = umeyama(&current.source, &current.target, false) else {
                break;
            };
            delta = step.compose(&delta);
            let next = correspond(&moved(&delta), &index, max_dist);
            iterations_run += 1;
            let converged = (next.fitness - current.fitness).abs() < cfg.convergence_eps
                && (next.rmse - current.rmse).abs() < cfg.convergence_eps;
            current = next;
            if converged {
                break;
            }
        }
        last = Some(current);
    }

    let last = last.expect("schedule has at least one stage");
    Ok(IcpResult {
        transform: delta.compose(init),
        fitness: last.fitness,
        inlier_rmse: last.rmse,
        iterations_run,
    })
}
