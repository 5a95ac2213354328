//! Metric scale from calibration spheres of known radius, and plant height.
//!
//! Sphere points are either captured in a ball around a seed center and
//! refined with Gauss–Newton on the geometric distance `|p − c| − r`, or
//! found automatically with a seeded RANSAC over minimal 4-point spheres.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{Point3, PointCloud};

const STEP_TOL: f64 = 1e-9;
const MAX_ITERATIONS: usize = 100;
const PLANAR_TOL: f64 = 1e-12;
const REFINE_ROUNDS: usize = 5;

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("points are coplanar, collinear or too few to define a sphere")]
    DegenerateGeometry,
    #[error("sphere fit diverged")]
    Diverged,
    #[error("{fits} sphere fits but {radii} known radii")]
    LengthMismatch { fits: usize, radii: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no sphere found: {0}")]
    NotFound(String),
    #[error("point cloud is empty")]
    EmptyCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereFit {
    pub center: Point3,
    pub radius: f64,
    pub rms_residual: f64,
    pub inlier_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    /// Mean of the per-sphere factors.
    pub factor: f64,
    pub per_sphere_factors: Vec<f64>,
    /// max / min of the per-sphere factors.
    pub spread: f64,
}

fn check_spread(points: &[Point3]) -> Result<(), ScaleError> {
    if points.len() < 4 {
        return Err(ScaleError::DegenerateGeometry);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let scatter = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - mean;
        a + d * d.transpose()
    });
    let sv = scatter.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if !(hi > 0.0) || lo <= PLANAR_TOL * hi {
        return Err(ScaleError::DegenerateGeometry);
    }
    Ok(())
}

fn rms_residual(points: &[Point3], center: &Point3, radius: f64) -> f64 {
    let sum: f64 = points
        .iter()
        .map(|p| {
            let r = (p - center).norm() - radius;
            r * r
        })
        .sum();
    (sum / points.len() as f64).sqrt()
}

/// Linear least-squares sphere (`|p|² = 2 c·p + k`), used as a seed.
pub fn algebraic_sphere(points: &[Point3]) -> Result<(Point3, f64), ScaleError> {
    check_spread(points)?;
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for p in points {
        let row = Vector4::new(2.0 * p.x, 2.0 * p.y, 2.0 * p.z, 1.0);
        ata += row * row.transpose();
        atb += row * p.coords.norm_squared();
    }
    let sol = ata.lu().solve(&atb).ok_or(ScaleError::DegenerateGeometry)?;
    let center = Point3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + center.coords.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(ScaleError::DegenerateGeometry);
    }
    Ok((center, r2.sqrt()))
}

/// Gauss–Newton fit of center and radius minimizing `Σ (|p − c| − r)²`,
/// starting at the seed. Stops when the parameter step drops below 1e-9 or
/// after 100 iterations.
pub fn fit_sphere(points: &[Point3], seed_center: Point3, seed_radius: f64) -> Result<SphereFit, ScaleError> {
    check_spread(points)?;
    if !(seed_radius > 0.0) || !seed_center.coords.iter().all(|v| v.is_finite()) {
        return Err(ScaleError::InvalidParameter(format!(
            "seed radius {seed_radius} must be positive"
        )));
    }
    let mut params = Vector4::new(seed_center.x, seed_center.y, seed_center.z, seed_radius);
    for _ in 0..MAX_ITERATIONS {
        let c = Vector3::new(params[0], params[1], params[2]);
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for p in points {
            let v = p.coords - c;
            let dist = v.norm();
            let dir = if dist > 0.0 { v / dist } else { Vector3::zeros() };
            let residual = dist - params[3];
            let row = Vector4::new(-dir.x, -dir.y, -dir.z, -1.0);
            jtj += row * row.transpose();
            jtr += row * residual;
        }
        let step = jtj
            .cholesky()
            .map(|ch| ch.solve(&(-jtr)))
            .ok_or(ScaleError::DegenerateGeometry)?;
        params += step;
        if !params.iter().all(|v| v.is_finite()) || params[3] <= 0.0 {
            return Err(ScaleError::Diverged);
        }
        if step.norm() < STEP_TOL {
            break;
        }
    }
    let center = Point3::new(params[0], params[1], params[2]);
    Ok(SphereFit {
        center,
        radius: params[3],
        rms_residual: rms_residual(points, &center, params[3]),
        inlier_count: points.len(),
    })
}

/// Points within `radius` (inclusive) of `center`.
pub fn crop_ball(cloud: &PointCloud, center: &Point3, radius: f64) -> PointCloud {
    let r2 = radius * radius;
    cloud.select(|_, p| (p - center).norm_squared() <= r2)
}

/// Sphere through four points, if they are not coplanar.
pub fn sphere_through(p: [&Point3; 4]) -> Option<(Point3, f64)> {
    // 2 (p_i − p_0)·c = |p_i|² − |p_0|²
    let row = |i: usize| (p[i] - p[0]).transpose() * 2.0;
    let a = Matrix3::from_rows(&[row(1), row(2), row(3)]);
    let n0 = p[0].coords.norm_squared();
    let b = Vector3::new(
        p[1].coords.norm_squared() - n0,
        p[2].coords.norm_squared() - n0,
        p[3].coords.norm_squared() - n0,
    );
    let scale = a.abs().max().max(f64::MIN_POSITIVE);
    if a.determinant().abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    let c = a.lu().solve(&b)?;
    let center = Point3::from(c);
    let r = (p[0] - center).norm();
    (r.is_finite() && r > 0.0).then_some((center, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub trials: usize,
    /// Inlier half-width around the sphere surface, in cloud units.
    pub band: f64,
    pub seed: u64,
    /// Optional accepted radius interval.
    pub radius_range: Option<(f64, f64)>,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            trials: 500,
            band: 0.002,
            seed: 0,
            radius_range: None,
        }
    }
}

/// RANSAC over random minimal spheres followed by Gauss–Newton on the
/// inliers of the best hypothesis. Trial `t` draws from a ChaCha stream
/// derived from `(seed, t)`, so results do not depend on thread count.
pub fn detect_sphere_ransac(points: &[Point3], params: &RansacParams) -> Result<SphereFit, ScaleError> {
    if points.len() < 4 {
        return Err(ScaleError::DegenerateGeometry);
    }
    if params.trials == 0 || !(params.band > 0.0) {
        return Err(ScaleError::InvalidParameter("trials and band must be positive".into()));
    }
    let inliers_of = |center: &Point3, radius: f64, band: f64| -> Vec<Point3> {
        points
            .iter()
            .filter(|p| ((*p - center).norm() - radius).abs() <= band)
            .copied()
            .collect()
    };
    let best = (0..params.trials)
        .into_par_iter()
        .filter_map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let mut idx = [0usize; 4];
            for k in 0..4 {
                loop {
                    let i = rng.random_range(0..points.len());
                    if !idx[..k].contains(&i) {
                        idx[k] = i;
                        break;
                    }
                }
            }
            let (center, radius) =
                sphere_through([&points[idx[0]], &points[idx[1]], &points[idx[2]], &points[idx[3]]])?;
            if let Some((lo, hi)) = params.radius_range {
                if radius < lo || radius > hi {
                    return None;
                }
            }
            let count = points
                .iter()
                .filter(|p| ((*p - center).norm() - radius).abs() <= params.band)
                .count();
            Some((count, t, center, radius))
        })
        .reduce_with(|a, b| {
            // Most inliers wins; ties go to the earlier trial.
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .ok_or_else(|| ScaleError::NotFound("no valid minimal sample".into()))?;

    let (_, _, center, radius) = best;
    let mut inliers = inliers_of(&center, radius, params.band);
    let mut fit = fit_sphere(&inliers, center, radius)?;
    // Tighten the band to the fit's own residual level so points that only
    // graze the surface (a supporting floor, say) stop pulling the fit.
    for _ in 0..REFINE_ROUNDS {
        let band = (3.0 * fit.rms_residual).clamp(params.band * 1e-3, params.band);
        let tighter = inliers_of(&fit.center, fit.radius, band);
        if tighter.len() == inliers.len() || tighter.len() < 4 {
            break;
        }
        inliers = tighter;
        fit = fit_sphere(&inliers, fit.center, fit.radius)?;
    }
    Ok(SphereFit {
        inlier_count: inliers.len(),
        rms_residual: rms_residual(&inliers, &fit.center, fit.radius),
        ..fit
    })
}

/// Per-sphere factor `known / fitted`; the overall factor is their mean.
pub fn estimate_scale(fits: &[SphereFit], known_radii: &[f64]) -> Result<ScaleEstimate, ScaleError> {
    if fits.len() != known_radii.len() {
        return Err(ScaleError::LengthMismatch {
            fits: fits.len(),
            radii: known_radii.len(),
        });
    }
    if fits.is_empty() {
        return Err(ScaleError::InvalidParameter("no spheres".into()));
    }
    if known_radii.iter().chain(fits.iter().map(|f| &f.radius)).any(|r| !(*r > 0.0)) {
        return Err(ScaleError::InvalidParameter("radii must be positive".into()));
    }
    let per_sphere_factors: Vec<f64> = fits
        .iter()
        .zip(known_radii)
        .map(|(f, k)| k / f.radius)
        .collect();
    let factor = per_sphere_factors.iter().sum::<f64>() / per_sphere_factors.len() as f64;
    let max = per_sphere_factors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = per_sphere_factors.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ScaleEstimate {
        factor,
        per_sphere_factors,
        spread: max / min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpAxis {
    X,
    Y,
    #[default]
    Z,
}

impl UpAxis {
    pub fn index(self) -> usize {
        match self {
            UpAxis::X => 0,
            UpAxis::Y => 1,
            UpAxis::Z => 2,
        }
    }
}

/// Linear-interpolated percentile (0..=100) of unsorted values.
fn percentile(values: &mut [f64], pct: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = pct / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// Highest up-coordinate minus the `base_percentile`-th percentile of the
/// up-coordinates (0 = lowest point).
pub fn measure_height(cloud: &PointCloud, up: UpAxis, base_percentile: f64) -> Result<f64, ScaleError> {
    if cloud.is_empty() {
        return Err(ScaleError::EmptyCloud);
    }
    if !(0.0..=100.0).contains(&base_percentile) {
        return Err(ScaleError::InvalidParameter(format!(
            "base percentile {base_percentile} outside [0, 100]"
        )));
    }
    let axis = up.index();
    let mut ups: Vec<f64> = cloud.points().iter().map(|p| p[axis]).collect();
    let top = ups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = percentile(&mut ups, base_percentile);
    Ok(top - base)
}

/// One calibration sphere as configured by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub seed_center: [f64; 3],
    pub capture_radius: f64,
    pub known_radius: f64,
    /// RANSAC inlier half-width in meters; defaults to 2 mm.
    #[serde(default)]
    pub band: Option<f64>,
}

fn default_qc() -> f64 {
    1.02
}

/// Calibration config file:
/// `{"spheres": [{"seed_center":[x,y,z], "capture_radius": r, "known_radius": kr}], "up_axis": "z"}`
/// plus optional QC, height and fitting-method settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub up_axis: UpAxis,
    #[serde(default = "default_qc")]
    pub max_spread: f64,
    #[serde(default)]
    pub base_percentile: f64,
    /// Restricts the height measurement to this box (in the rescaled frame).
    #[serde(default)]
    pub height_region: Option<crate::pointcloud::Aabb>,
    #[serde(default)]
    pub method: SphereMethod,
}

/// How a configured sphere is extracted from its ball neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SphereMethod {
    /// Algebraic seed, then Gauss–Newton on every point in the ball.
    #[default]
    LeastSquares,
    /// RANSAC inside the ball, then Gauss–Newton on the inliers.
    Ransac,
}

/// Fits one configured sphere after cropping a ball around its seed center.
pub fn fit_configured_sphere(
    cloud: &PointCloud,
    spec: &SphereSpec,
    method: SphereMethod,
    seed: u64,
) -> Result<SphereFit, ScaleError> {
    if !(spec.capture_radius > 0.0) {
        return Err(ScaleError::InvalidParameter("capture radius must be positive".into()));
    }
    let center = Point3::from(spec.seed_center);
    let ball = crop_ball(cloud, &center, spec.capture_radius);
    match method {
        SphereMethod::LeastSquares => {
            let (c, r) = algebraic_sphere(ball.points())
                .unwrap_or((center, spec.capture_radius / 2.0));
            fit_sphere(ball.points(), c, r)
        }
        SphereMethod::Ransac => {
            let params = RansacParams {
                band: spec.band.unwrap_or(RansacParams::default().band),
                seed,
                radius_range: Some((0.0, spec.capture_radius)),
                ..RansacParams::default()
            };
            detect_sphere_ransac(ball.points(), &params)
        }
    }
}
