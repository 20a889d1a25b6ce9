//! LiDAR to camera semantic segment translation.
//!
//! A spherical range projection of a labelled point cloud conditions a
//! generator that paints the same scene as a camera-view segmentation map.

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod titan;

pub use error::{Error, Result};
pub use exec::Exec;
