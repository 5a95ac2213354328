//! Alignment of a reconstruction into the ground-truth frame.
//!
//! Registration runs in two steps: a closed-form similarity estimate from a
//! handful of picked landmark pairs, then point-to-point ICP on voxel
//! downsampled copies of both clouds. ICP never touches the scale; it comes
//! from the landmarks or from sphere calibration.

mod icp;
mod landmark;
mod transform;

pub use icp::{icp_register, IcpConfig, IcpResult, IcpStages};
pub use landmark::{estimate_landmark_transform, LandmarkFit, Landmarks};
pub use transform::{apply_transform, SimilarityTransform, TransformJson};

use thiserror::Error;

use crate::pointcloud::CloudError;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("source has {source_len} points but target has {target_len}")]
    LengthMismatch { source_len: usize, target_len: usize },
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate point configuration: centered source has rank < 2")]
    DegenerateConfiguration,
    #[error("no correspondences within {max_dist} m at the first ICP iteration")]
    NoCorrespondences { max_dist: f64 },
    #[error("invalid ICP configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}
