//! Evaluation toolkit for reconstructed 3D point clouds.
//!
//! The crate scores a reconstruction against a ground-truth scan and
//! supports the surrounding workflow:
//!
//! - [`pointcloud`]: cloud type, PLY I/O, k-d tree, crop, voxel grid and
//!   statistical outlier filtering.
//! - [`registration`]: landmark similarity estimate and point-to-point ICP.
//! - [`metrics3d`]: distance-thresholded precision, recall, F-score, PR
//!   curves and correct/missing/outlier classification.
//! - [`metrics2d`]: MSE, PSNR, SSIM and the LPIPS aggregation formula over
//!   channel-normalized feature stacks.
//! - [`earlystop`]: plateau detection over per-checkpoint metric series.
//! - [`scalecal`]: metric scale from calibration spheres and height
//!   measurement.
//! - [`report`]: evaluation report rows and the Pearson correlation helper.

pub mod earlystop;
pub mod metrics2d;
pub mod metrics3d;
pub mod pointcloud;
pub mod registration;
pub mod report;
pub mod scalecal;

pub use pointcloud::{Aabb, NnIndex, Point3, PointCloud, Rgb};
pub use registration::SimilarityTransform;
