//! Continuous-time LiDAR bundle adjustment.
//!
//! Globally aligns large sets of timestamped 3D scans by jointly optimizing
//! a continuous-time trajectory (slerp/lerp between per-scan boundary
//! knots) against point-to-plane residuals, with robust sparse least
//! squares, voxel-hash correspondence search, and out-of-core scan access.

pub mod cli;
pub mod config;
pub mod correspondence;
pub mod evaluation;
pub mod error;
pub mod geometry;
pub mod optimizer;
pub mod pointcloud;
pub mod storage;

pub use error::{Error, Result};
