//! Convex domains, signed distance, and their Cartesian embedding.

mod domain;
mod grid;

pub use domain::{DomainSpec, NuInterval, Shape};
pub use grid::{Arm, Grid, NodeClass, Pin, THETA_PIN};

pub(crate) use domain::norm;

use thiserror::Error;

/// Points always carry three coordinates; planar problems leave the last at 0.
pub type Point = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("unsupported ambient dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("boundary projection did not converge for {point:?} (last parameter {last_parameter})")]
    ProjectionFailed { point: Point, last_parameter: f64 },
    #[error("grid spacing {spacing} too coarse: must be positive and at most {bound}")]
    SpacingTooCoarse { spacing: f64, bound: f64 },
}
