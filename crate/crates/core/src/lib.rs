//! Regularized mean curvature flow with forcing on convex domains.

pub mod data;
pub mod expr;
pub mod geometry;
pub mod operator;
pub mod flow;
pub mod barriers;
pub mod verify;
pub mod liouville;
pub mod io;
pub mod config;
pub mod run;
