//! Building blocks for multi-robot visual SLAM back-ends: cross-validated
//! binary feature matching, exponential-threshold keyframe selection,
//! coarse-to-fine map fusion with generalized ICP, voxel sampling and
//! Gaussian smoothing, and absolute-trajectory-error evaluation.
//!
//! [`simgen`] produces deterministic synthetic scenes with ground truth for
//! all of the above.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud;
pub mod cloudops;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod keyframe;
pub mod registration;
pub mod simgen;
pub mod spatial;

pub use cloud::PointCloud;
pub use geometry::{Point3, Pose, Quaternion};
