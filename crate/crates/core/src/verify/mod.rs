//! Numerical checks of the a priori estimates and of the viscosity
//! inequalities.

mod energy;
mod viscosity;

pub use energy::{dissipation_budget, energy_series, head_and_tail, DissipationBudget, EnergyTrace};
pub use viscosity::{
    degenerate_inf, degenerate_sup, viscosity_spot_check, Branch, Mode, ProbeOptions, ViscosityProbe, Violation,
};

use thiserror::Error;

use crate::flow::{FlowReport, Ibvp};
use crate::geometry::Grid;
use crate::operator::{Evaluation, FlowParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("need at least 3 snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error("snapshot times must strictly increase (index {0})")]
    NonIncreasingTimes(usize),
    #[error("snapshot length {got} does not match grid node count {expected}")]
    SnapshotSize { got: usize, expected: usize },
}

/// `max |rate(g)|` over the unknowns: the t = 0 value of the bound on u_t.
pub fn ut_initial_slice_bound(problem: &Ibvp, grid: &Grid, params: &FlowParams) -> f64 {
    let state = problem.initial_state(grid);
    let mut eval = Evaluation::default();
    eval.compute(grid, params, &problem.trace(grid), &state.values);
    eval.sup_rate()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// max |∇u| at interior nodes over t > 0.
    pub interior_max: f64,
    /// max |∇u| over the t = 0 slice and the near-boundary ring at all t.
    pub boundary_max: f64,
    pub tolerance: f64,
    pub passes: bool,
}

pub fn gradient_interior_max_check(report: &FlowReport) -> GradientCheck {
    let s = &report.series;
    let interior_max = s.sup_grad_interior.iter().skip(1).copied().fold(0.0, f64::max);
    let ring = s.sup_grad_ring.iter().copied().fold(0.0, f64::max);
    let boundary_max = ring.max(s.sup_grad.first().copied().unwrap_or(0.0));
    let tolerance = 10.0 * report.spacing;
    GradientCheck { interior_max, boundary_max, tolerance, passes: interior_max <= boundary_max + tolerance }
}
