use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CloudError, NnIndex, Point3, PointCloud, Rgb};

/// Replaces the points of every occupied voxel by their centroid.
///
/// Voxel keys are `floor((p - min) / voxel)` with `min` the cloud's own
/// minimum corner; output is ordered by key lexicographically (x, then y,
/// then z). Colors, when present, are averaged per voxel.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, CloudError> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(CloudError::NonPositiveVoxel(voxel));
    }
    let Some(bounds) = cloud.bounds() else {
        return Ok(cloud.clone());
    };

    struct Acc {
        sum: [f64; 3],
        lo: [f64; 3],
        hi: [f64; 3],
        rgb: [u64; 3],
        n: usize,
    }

    let mut voxels: BTreeMap<[i64; 3], Acc> = BTreeMap::new();
    let colors = cloud.colors();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [0, 1, 2].map(|a| ((p[a] - bounds.min[a]) / voxel).floor() as i64);
        let acc = voxels.entry(key).or_insert(Acc {
            sum: [0.0; 3],
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
            rgb: [0; 3],
            n: 0,
        });
        for a in 0..3 {
            acc.sum[a] += p[a];
            acc.lo[a] = acc.lo[a].min(p[a]);
            acc.hi[a] = acc.hi[a].max(p[a]);
        }
        if let Some(c) = colors {
            for ch in 0..3 {
                acc.rgb[ch] += c[i].0[ch] as u64;
            }
        }
        acc.n += 1;
    }

    let mut points = Vec::with_capacity(voxels.len());
    let mut out_colors = colors.map(|_| Vec::with_capacity(voxels.len()));
    for acc in voxels.values() {
        let n = acc.n as f64;
        // Clamp so rounding in the mean never leaves the source points' box.
        let c = [0, 1, 2].map(|a| (acc.sum[a] / n).clamp(acc.lo[a], acc.hi[a]));
        points.push(Point3::new(c[0], c[1], c[2]));
        if let Some(out) = out_colors.as_mut() {
            let n = acc.n as u64;
            out.push(Rgb(acc.rgb.map(|s| ((s + n / 2) / n) as u8)));
        }
    }
    Ok(PointCloud::new(points, out_colors)?.with_label(cloud.label.clone()))
}

/// Parameters of the mean-kNN statistical outlier filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierParams {
    pub k: usize,
    pub sigma: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self { k: 20, sigma: 2.0 }
    }
}

/// Drops points whose mean distance to their `k` nearest neighbours exceeds
/// `mean + sigma * std` of that statistic over the whole cloud.
///
/// `std` is the sample standard deviation. `sigma = +inf` keeps every point.
pub fn remove_statistical_outliers(
    cloud: &PointCloud,
    params: OutlierParams,
) -> Result<PointCloud, CloudError> {
    let OutlierParams { k, sigma } = params;
    if k == 0 {
        return Err(CloudError::InvalidParameter("k must be at least 1".into()));
    }
    if sigma.is_nan() {
        return Err(CloudError::InvalidParameter("sigma is NaN".into()));
    }
    if cloud.len() <= k {
        return Err(CloudError::CloudTooSmall {
            len: cloud.len(),
            k,
        });
    }
    if sigma == f64::INFINITY {
        return Ok(cloud.clone());
    }

    let means = mean_knn_distances(cloud.points(), k)?;
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    // Means that agree up to rounding count as equal.
    if hi - lo <= 1e-12 * hi {
        return Ok(cloud.clone());
    }
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / (n - 1.0);
    let limit = mu + sigma * var.sqrt();
    Ok(cloud.select(|i, _| means[i] <= limit))
}

/// Mean distance from each point to its `k` nearest other points.
pub(crate) fn mean_knn_distances(points: &[Point3], k: usize) -> Result<Vec<f64>, CloudError> {
    let index = NnIndex::from_points(points)?;
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = index.knn(p, k, Some(i));
            nn.iter().map(|n| n.distance()).sum::<f64>() / nn.len() as f64
        })
        .collect())
}
