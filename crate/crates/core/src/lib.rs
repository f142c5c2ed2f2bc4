//! Geometric core of a two-view 6D object pose estimator.
//!
//! Features from a reference and a query view are lifted into a regular 3D
//! grid, turned into per-keypoint probability fields, read out as 3D
//! keypoints and finally registered against the model keypoints with an
//! exhaustive soft-RANSAC solver.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. Synthetic
//! data generation, file formats and the command line live in the
//! `posevolume` companion crate.
#![no_std]
#![warn(missing_docs)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Projection, RigidTransform, ViewPair};

/// 3-vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
