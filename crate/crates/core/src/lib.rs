//! Absolute pose regression from desk-scale sensor data.
//!
//! A transformer-based regressor maps a single camera image, BEV LiDAR
//! histogram, or sampled point set to a 3D position and orientation
//! quaternion. The crate covers the full pipeline: preprocessing, a small
//! autodiff core, the dual-branch model, training with a balanced L1 loss,
//! evaluation, synthetic dataset generation, and a TCP initial-pose
//! service.

pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod lidar;
pub mod model;
pub mod service;
pub mod train;

pub use error::{AprError, Result};
