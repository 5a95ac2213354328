use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::pointcloud::{Point3, PointCloud};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// `p ↦ scale · R · p + t` with `R` a proper rotation and `scale > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Validates orthonormality, `det(R) = 1` (both within 1e-9) and `scale > 0`.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<Self, RegistrationError> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.iter().any(|v| v.abs() > ORTHONORMAL_TOL)
            || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL
        {
            return Err(RegistrationError::InvalidTransform(
                "rotation is not a proper orthonormal matrix".into(),
            ));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(RegistrationError::InvalidTransform(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(RegistrationError::InvalidTransform(
                "translation is not finite".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn rigid(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, RegistrationError> {
        Self::new(rotation, translation, 1.0)
    }

    pub fn from_scale(scale: f64) -> Result<Self, RegistrationError> {
        Self::new(Matrix3::identity(), Vector3::zeros(), scale)
    }

    // Callers guarantee the invariants (closed-form solvers, composition).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        Self {
            rotation,
            translation,
            scale,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// Homogeneous 4×4 matrix with `scale · R` in the upper-left block.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotation * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_json(&self) -> TransformJson {
        let m = self.to_homogeneous();
        TransformJson {
            matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            scale: self.scale,
        }
    }

    pub fn from_json(json: &TransformJson) -> Result<Self, RegistrationError> {
        let m = &json.matrix;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(RegistrationError::InvalidTransform(
                "last matrix row must be [0, 0, 0, 1]".into(),
            ));
        }
        if !(json.scale > 0.0) {
            return Err(RegistrationError::InvalidTransform(format!(
                "scale must be positive, got {}",
                json.scale
            )));
        }
        let rotation = Matrix3::from_fn(|r, c| m[r][c] / json.scale);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        Self::new(rotation, translation, json.scale)
    }
}

/// On-disk transform: row-major homogeneous matrix plus the explicit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformJson {
    pub matrix: [[f64; 4]; 4],
    pub scale: f64,
}

/// Maps every point through `t`, keeping colors, order and label.
pub fn apply_transform(cloud: &PointCloud, t: &SimilarityTransform) -> PointCloud {
    cloud
        .map_points(|p| t.apply(p))
        .expect("similarity transforms keep finite points finite")
}
