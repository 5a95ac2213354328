//! Point-cloud representation and the geometric substrate used by every
//! other module: PLY I/O, nearest-neighbour indexing, cropping, voxel
//! downsampling and statistical outlier removal.

mod filter;
mod kdtree;
mod ply;

pub use filter::{remove_statistical_outliers, voxel_downsample, OutlierParams};
pub use kdtree::{Neighbor, NnIndex};
pub use ply::{load_ply, read_ply, save_ply, write_ply, PlyError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinates are always stored as 64-bit floats; PLY float32 fields are
/// widened on load.
pub type Point3 = nalgebra::Point3<f64>;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("point {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
    #[error("color count {colors} does not match point count {points}")]
    ColorLengthMismatch { points: usize, colors: usize },
    #[error("crop produced an empty cloud")]
    EmptyResult,
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
    #[error("cloud of {len} points is too small for k = {k}")]
    CloudTooSmall { len: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// 8-bit RGB color attached to a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const GREY: Rgb = Rgb([128, 128, 128]);
    pub const RED: Rgb = Rgb([255, 0, 0]);
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
}

/// Ordered list of points with optional parallel colors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<Rgb>>,
    pub label: String,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates and color arrays whose
    /// length differs from the point count. Empty clouds are allowed here;
    /// operations that need points check for themselves.
    pub fn new(points: Vec<Point3>, colors: Option<Vec<Rgb>>) -> Result<Self, CloudError> {
        if let Some(index) = points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(CloudError::NonFiniteCoordinate { index });
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(CloudError::ColorLengthMismatch {
                    points: points.len(),
                    colors: c.len(),
                });
            }
        }
        Ok(Self {
            points,
            colors,
            label: String::new(),
        })
    }

    pub fn from_points(points: Vec<Point3>) -> Result<Self, CloudError> {
        Self::new(points, None)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ensure_nonempty(&self) -> Result<(), CloudError> {
        if self.points.is_empty() {
            Err(CloudError::Empty)
        } else {
            Ok(())
        }
    }

    /// Replaces every color; `colors` must match the point count.
    pub fn set_colors(&mut self, colors: Vec<Rgb>) -> Result<(), CloudError> {
        if colors.len() != self.points.len() {
            return Err(CloudError::ColorLengthMismatch {
                points: self.points.len(),
                colors: colors.len(),
            });
        }
        self.colors = Some(colors);
        Ok(())
    }

    /// Maps every point through `f`, keeping colors, order and label.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Result<Self, CloudError> {
        let points = self.points.iter().map(f).collect();
        Ok(Self::new(points, self.colors.clone())?.with_label(self.label.clone()))
    }

    /// Keeps the points whose index satisfies `keep`, preserving order and colors.
    pub fn select(&self, mut keep: impl FnMut(usize, &Point3) -> bool) -> Self {
        let mut points = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if keep(i, p) {
                points.push(*p);
                if let (Some(out), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        Self {
            points,
            colors,
            label: self.label.clone(),
        }
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = self.points.first()?;
        let mut min = *first;
        let mut max = *first;
        for p in &self.points[1..] {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Aabb { min, max })
    }

    /// Drops points whose coordinates exactly repeat an earlier point.
    pub fn dedup_exact(&self) -> Self {
        let mut seen = std::collections::HashSet::with_capacity(self.points.len());
        self.select(|_, p| seen.insert([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]))
    }
}

/// Axis-aligned box with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self, CloudError> {
        if (0..3).any(|a| !(min[a] <= max[a])) {
            return Err(CloudError::InvalidParameter(format!(
                "box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }
}

/// Keeps the points inside `bbox` (boundary inclusive). An empty result is
/// reported as [`CloudError::EmptyResult`].
pub fn crop(cloud: &PointCloud, bbox: &Aabb) -> Result<PointCloud, CloudError> {
    let out = cloud.select(|_, p| bbox.contains(p));
    if out.is_empty() {
        return Err(CloudError::EmptyResult);
    }
    Ok(out)
}

#[inline]
pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}
