use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{RegistrationError, SimilarityTransform};
use crate::pointcloud::Point3;

// Relative size of the second singular value of the source scatter below
// which the points count as collinear.
const RANK_TOL: f64 = 1e-12;

/// Closed-form landmark alignment and its residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkFit {
    pub transform: SimilarityTransform,
    /// RMS of `|T(s_i) - t_i|` over the landmark pairs.
    pub rms_residual: f64,
}

/// Corresponding landmark lists as stored on disk:
/// `{"source": [[x,y,z],...], "target": [[x,y,z],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub source: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
}

impl Landmarks {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn source_points(&self) -> Vec<Point3> {
        self.source.iter().map(|p| Point3::from(*p)).collect()
    }

    pub fn target_points(&self) -> Vec<Point3> {
        self.target.iter().map(|p| Point3::from(*p)).collect()
    }

    pub fn estimate(&self, with_scale: bool) -> Result<LandmarkFit, RegistrationError> {
        estimate_landmark_transform(&self.source_points(), &self.target_points(), with_scale)
    }
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// taking `source[i]` onto `target[i]`, via the SVD of the cross-covariance
/// (Umeyama's method).
pub fn estimate_landmark_transform(
    source: &[Point3],
    target: &[Point3],
    with_scale: bool,
) -> Result<LandmarkFit, RegistrationError> {
    if source.len() != target.len() {
        return Err(RegistrationError::LengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(RegistrationError::TooFewPoints {
            needed: 3,
            got: source.len(),
        });
    }
    let transform = umeyama(source, target, with_scale)?;
    let rms_residual = rms(source, target, &transform);
    Ok(LandmarkFit {
        transform,
        rms_residual,
    })
}

pub(crate) fn rms(source: &[Point3], target: &[Point3], t: &SimilarityTransform) -> f64 {
    let sum: f64 = source
        .iter()
        .zip(target)
        .map(|(s, d)| (t.apply(s) - d).norm_squared())
        .sum();
    (sum / source.len() as f64).sqrt()
}

pub(crate) fn umeyama(
    source: &[Point3],
    target: &[Point3],
    with_scale: bool,
) -> Result<SimilarityTransform, RegistrationError> {
    let n = source.len() as f64;
    let mu_s = source.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mu_t = target.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords - mu_s;
        let dt = t.coords - mu_t;
        cross += dt * ds.transpose();
        scatter += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cross /= n;
    var_s /= n;

    let sv = scatter.singular_values();
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOL * sv[0] {
        return Err(RegistrationError::DegenerateConfiguration);
    }

    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if u.determinant() * v_t.determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * s * v_t;
    let scale = if with_scale {
        let sig = svd.singular_values;
        (sig[0] + sig[1] + d * sig[2]) / var_s
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(RegistrationError::DegenerateConfiguration);
    }
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform::from_parts(rotation, translation, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn square() -> Vec<Point3> {
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.3, 0.2, 1.0),
        ]
    }

    #[test]
    fn identity_on_equal_sets() {
        let pts = square();
        let fit = estimate_landmark_transform(&pts, &pts, true).unwrap();
        assert!((fit.transform.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(fit.transform.translation().amax() < 1e-12);
        assert!((fit.transform.scale() - 1.0).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn recovers_scaled_rotation() {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()).into_inner();
        let t = Vector3::new(1.0, 2.0, 3.0);
        let src = square();
        let dst: Vec<Point3> = src.iter().map(|p| Point3::from(2.0 * (rz * p.coords) + t)).collect();
        let fit = estimate_landmark_transform(&src, &dst, true).unwrap();
        assert!((fit.transform.scale() - 2.0).abs() < 1e-9);
        assert!((fit.transform.rotation() - rz).amax() < 1e-9);
        assert!((fit.transform.translation() - t).amax() < 1e-9);
    }

    #[test]
    fn rigid_mode_keeps_unit_scale() {
        let src = square();
        let dst: Vec<Point3> = src.iter().map(|p| Point3::from(p.coords * 2.0)).collect();
        let fit = estimate_landmark_transform(&src, &dst, false).unwrap();
        assert_eq!(fit.transform.scale(), 1.0);
        assert!(fit.rms_residual > 0.1);
    }

    #[test]
    fn collinear_is_degenerate() {
        let src = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(2.0, 2.0, 2.0),
        ];
        assert!(matches!(
            estimate_landmark_transform(&src, &src, true),
            Err(RegistrationError::DegenerateConfiguration)
        ));
    }

    #[test]
    fn three_coplanar_points_are_enough() {
        let src = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 2.0, 0.0),
        ];
        let r = Rotation3::from_euler_angles(0.3, 0.2, -0.9).into_inner();
        let dst: Vec<Point3> = src.iter().map(|p| Point3::from(r * p.coords)).collect();
        let fit = estimate_landmark_transform(&src, &dst, true).unwrap();
        assert!((fit.transform.rotation() - r).amax() < 1e-9);
    }

    #[test]
    fn length_mismatch() {
        let src = square();
        assert!(matches!(
            estimate_landmark_transform(&src, &src[..3], true),
            Err(RegistrationError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn landmarks_json_shape() {
        let json = r#"{"source": [[0,0,0],[1,0,0],[0,1,0]], "target": [[0,0,0],[1,0,0],[0,1,0]]}"#;
        let lm: Landmarks = serde_json::from_str(json).unwrap();
        assert_eq!(lm.source_points().len(), 3);
        assert!(lm.estimate(true).unwrap().rms_residual < 1e-12);
    }
}
