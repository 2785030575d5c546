//! Initial-boundary value problem driver, steady relaxation and
//! ε-continuation.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::ScalarFn;
use crate::geometry::{DomainSpec, GeometryError, Grid, NodeClass, Point};
use crate::operator::{self, BoundaryTrace, Evaluation, FieldState, FlowParams, OperatorError};

pub const COMPATIBILITY_TOL: f64 = 1e-10;
pub const COMPATIBILITY_SAMPLES: usize = 512;
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("boundary and initial data disagree by {mismatch:e} at {point:?}")]
    Incompatible { mismatch: f64, point: Point },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("run needs {needed} steps, budget is {budget}")]
    StepBudget { needed: u64, budget: u64 },
    #[error("blow-up at step {step}: {source}")]
    BlowUp { step: u64, source: OperatorError, partial: Box<FlowReport> },
}

/// Dirichlet data `h`, initial data `g`, and the domain they live on.
#[derive(Debug, Clone)]
pub struct Ibvp {
    pub domain: DomainSpec,
    pub h: ScalarFn,
    pub g: ScalarFn,
    /// Largest |h − g| seen over the boundary samples.
    pub mismatch: f64,
}

impl Ibvp {
    pub fn new(domain: DomainSpec, h: ScalarFn, g: ScalarFn) -> Result<Self, FlowError> {
        let mut worst = (0.0, [0.0; 3]);
        for p in domain.boundary_samples(COMPATIBILITY_SAMPLES)? {
            let m = (h.eval(&p) - g.eval(&p)).abs();
            if !(m <= worst.0) {
                worst = (m, p);
            }
        }
        if !(worst.0 <= COMPATIBILITY_TOL) {
            return Err(FlowError::Incompatible { mismatch: worst.0, point: worst.1 });
        }
        Ok(Self { domain, h, g, mismatch: worst.0 })
    }

    pub fn is_compatible(&self) -> bool {
        self.mismatch <= COMPATIBILITY_TOL
    }

    pub fn trace(&self, grid: &Grid) -> BoundaryTrace {
        BoundaryTrace::new(grid, &self.h)
    }

    pub fn initial_state(&self, grid: &Grid) -> FieldState {
        FieldState::from_data(grid, &self.g, &self.h, &self.trace(grid))
    }
}

/// Per-step diagnostics. All vectors have the same length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub sup_u: Vec<f64>,
    pub sup_grad: Vec<f64>,
    /// max |∇u| over nodes whose stencils stay off the boundary.
    pub sup_grad_interior: Vec<f64>,
    /// max |∇u| over near-boundary nodes.
    pub sup_grad_ring: Vec<f64>,
    pub sup_ut: Vec<f64>,
    /// ∫ sqrt(|∇u|² + ε²)
    pub energy: Vec<f64>,
    /// ∫ u_t² / sqrt(|∇u|² + ε²)
    pub dissipation: Vec<f64>,
    /// ν ∫ u_t
    pub source: Vec<f64>,
    /// ∫ u_t²
    pub ut_sq: Vec<f64>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn columns(&self) -> [&Vec<f64>; 10] {
        [
            &self.t,
            &self.sup_u,
            &self.sup_grad,
            &self.sup_grad_interior,
            &self.sup_grad_ring,
            &self.sup_ut,
            &self.energy,
            &self.dissipation,
            &self.source,
            &self.ut_sq,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.columns().iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn lengths_agree(&self) -> bool {
        self.columns().iter().all(|c| c.len() == self.t.len())
    }

    fn record(&mut self, grid: &Grid, params: &FlowParams, state: &FieldState, eval: &Evaluation) {
        let eps2 = params.epsilon * params.epsilon;
        let (mut su, mut sg, mut sgi, mut sgr, mut sut) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let (mut j, mut d, mut s, mut q) = (0.0, 0.0, 0.0, 0.0);
        for (slot, &node) in grid.unknowns().iter().enumerate() {
            let g = crate::geometry::norm(&eval.gradient[slot]);
            let r = eval.rate[slot];
            let w = grid.weight(slot);
            let root = (g * g + eps2).sqrt();
            su = su.max(state.values[node].abs());
            sg = sg.max(g);
            match grid.class(node) {
                NodeClass::Interior => sgi = sgi.max(g),
                _ => sgr = sgr.max(g),
            }
            sut = sut.max(r.abs());
            j += w * root;
            d += w * r * r / root;
            s += w * r;
            q += w * r * r;
        }
        self.t.push(state.t);
        self.sup_u.push(su);
        self.sup_grad.push(sg);
        self.sup_grad_interior.push(sgi);
        self.sup_grad_ring.push(sgr);
        self.sup_ut.push(sut);
        self.energy.push(j);
        self.dissipation.push(d);
        self.source.push(params.nu * s);
        self.ut_sq.push(q);
    }
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub params: FlowParams,
    pub spacing: f64,
    pub dt: f64,
    /// Requested `dt` exceeded the explicit stability limit.
    pub dt_warning: bool,
    pub steps: u64,
    /// Step index of each snapshot.
    pub snapshot_steps: Vec<u64>,
    pub snapshots: Vec<FieldState>,
    pub series: Series,
    pub wall_clock: Duration,
}

impl FlowReport {
    pub fn final_time(&self) -> f64 {
        self.series.t.last().copied().unwrap_or(0.0)
    }
}

/// Options for [`solve_ibvp`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    pub step_budget: u64,
}

impl RunOptions {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, snapshot_times: Vec::new(), step_budget: DEFAULT_STEP_BUDGET }
    }

    pub fn with_snapshots(mut self, times: &[f64]) -> Self {
        self.snapshot_times = times.to_vec();
        self
    }
}

/// Evolves `g` to the horizon. The step is shrunk so an integer number of
/// steps lands on the horizon; snapshots go to the last completed step at or
/// before each requested time.
pub fn solve_ibvp(problem: &Ibvp, grid: &Grid, params: &FlowParams, opts: &RunOptions) -> Result<FlowReport, FlowError> {
    solve_ibvp_observed(problem, grid, params, opts, |_, _| {})
}

/// [`solve_ibvp`] calling `observe(step, state)` at every time level.
pub fn solve_ibvp_observed(
    problem: &Ibvp,
    grid: &Grid,
    params: &FlowParams,
    opts: &RunOptions,
    mut observe: impl FnMut(u64, &FieldState),
) -> Result<FlowReport, FlowError> {
    params.validate()?;
    if !(opts.horizon >= 0.0 && opts.horizon.is_finite()) {
        return Err(FlowError::InvalidArgument(format!("horizon must be non-negative, got {}", opts.horizon)));
    }
    if let Some(t) = opts.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= opts.horizon)) {
        return Err(FlowError::InvalidArgument(format!("snapshot time {t} outside [0, {}]", opts.horizon)));
    }
    let ts = operator::stable_dt(params, grid);
    let n = (opts.horizon / ts.dt - 1e-9).ceil().max(0.0) as u64;
    if n > opts.step_budget {
        return Err(FlowError::StepBudget { needed: n, budget: opts.step_budget });
    }
    let dt = if n == 0 { ts.dt } else { opts.horizon / n as f64 };
    let mut snap_steps: Vec<u64> = opts
        .snapshot_times
        .iter()
        .map(|t| if n == 0 { 0 } else { ((t / dt) + 1e-9).floor().min(n as f64) as u64 })
        .collect();
    snap_steps.sort_unstable();

    let start = Instant::now();
    let trace = problem.trace(grid);
    let mut state = problem.initial_state(grid);
    let mut report = FlowReport {
        params: *params,
        spacing: grid.spacing(),
        dt,
        dt_warning: ts.exceeds_stability,
        steps: 0,
        snapshot_steps: snap_steps.clone(),
        snapshots: Vec::with_capacity(snap_steps.len()),
        series: Series::default(),
        wall_clock: Duration::ZERO,
    };
    let mut eval = Evaluation::default();
    let mut next_snap = 0;
    for k in 0..=n {
        eval.compute(grid, params, &trace, &state.values);
        if let Some(node) = eval.first_non_finite(grid, &state.values) {
            report.steps = k;
            report.wall_clock = start.elapsed();
            let source = OperatorError::NonFinite { node, position: grid.position(node), time: state.t };
            return Err(FlowError::BlowUp { step: k, source, partial: Box::new(report) });
        }
        report.series.record(grid, params, &state, &eval);
        observe(k, &state);
        while next_snap < snap_steps.len() && snap_steps[next_snap] == k {
            report.snapshots.push(state.clone());
            next_snap += 1;
        }
        if k < n {
            operator::advance(grid, &trace, &eval, dt, &mut state.values);
            state.t = (k + 1) as f64 * dt;
        }
    }
    report.steps = n;
    report.wall_clock = start.elapsed();
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SteadyResult {
    pub state: FieldState,
    pub steps: u64,
    pub converged: bool,
    /// sup |rate| of the returned field.
    pub residual: f64,
}

/// Steps until sup |rate| < tol or the budget runs out.
pub fn relax_to_steady(
    problem: &Ibvp,
    grid: &Grid,
    params: &FlowParams,
    tol: f64,
    budget: u64,
) -> Result<SteadyResult, FlowError> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(FlowError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let dt = operator::stable_dt(params, grid).dt;
    let trace = problem.trace(grid);
    let mut state = problem.initial_state(grid);
    let mut eval = Evaluation::default();
    let mut steps = 0u64;
    loop {
        eval.compute(grid, params, &trace, &state.values);
        if let Some(node) = eval.first_non_finite(grid, &state.values) {
            return Err(OperatorError::NonFinite { node, position: grid.position(node), time: state.t }.into());
        }
        let residual = eval.sup_rate();
        if residual < tol || steps >= budget {
            return Ok(SteadyResult { state, steps, converged: residual < tol, residual });
        }
        operator::advance(grid, &trace, &eval, dt, &mut state.values);
        steps += 1;
        state.t = steps as f64 * dt;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationRow {
    pub eps_coarse: f64,
    pub eps_fine: f64,
    /// sup over unknowns of |u^{eps_coarse} − u^{eps_fine}| at the horizon.
    pub sup_diff: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationTable {
    pub rows: Vec<ContinuationRow>,
    /// Differences decrease row to row.
    pub monotone: bool,
    /// First failing run, if any; the table stops before it.
    pub failure: Option<(f64, String)>,
}

/// Solves at each ε (concurrently) and tabulates consecutive differences.
pub fn epsilon_continuation(
    problem: &Ibvp,
    grid: &Grid,
    eps_list: &[f64],
    params: &FlowParams,
    horizon: f64,
) -> Result<ContinuationTable, FlowError> {
    if eps_list.len() < 3 {
        return Err(FlowError::InvalidArgument(format!("need at least 3 epsilon values, got {}", eps_list.len())));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(FlowError::InvalidArgument("epsilon values must be strictly decreasing".into()));
    }
    let opts = RunOptions::new(horizon).with_snapshots(&[horizon]);
    let results: Vec<Result<FieldState, FlowError>> = std::thread::scope(|s| {
        let handles: Vec<_> = eps_list
            .iter()
            .map(|&eps| {
                let p = params.with_epsilon(eps);
                let opts = &opts;
                s.spawn(move || solve_ibvp(problem, grid, &p, opts).map(|mut r| r.snapshots.pop().expect("horizon snapshot")))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("continuation worker panicked")).collect()
    });
    let mut rows = Vec::new();
    let mut failure = None;
    let mut prev: Option<(f64, FieldState)> = None;
    for (&eps, res) in eps_list.iter().zip(results) {
        match res {
            Ok(state) => {
                if let Some((pe, ps)) = &prev {
                    let sup_diff = grid
                        .unknowns()
                        .iter()
                        .map(|&n| (ps.values[n] - state.values[n]).abs())
                        .fold(0.0, f64::max);
                    rows.push(ContinuationRow { eps_coarse: *pe, eps_fine: eps, sup_diff });
                }
                prev = Some((eps, state));
            }
            Err(e) => {
                failure = Some((eps, e.to_string()));
                break;
            }
        }
    }
    let monotone = rows.windows(2).all(|w| w[1].sup_diff <= w[0].sup_diff);
    Ok(ContinuationTable { rows, monotone, failure })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> DomainSpec {
        DomainSpec::ball(1.0, 2).unwrap()
    }

    fn linear() -> Ibvp {
        Ibvp::new(disk(), ScalarFn::coordinate(0), ScalarFn::coordinate(0)).unwrap()
    }

    #[test]
    fn incompatible_data_rejected() {
        let err = Ibvp::new(disk(), ScalarFn::coordinate(0), ScalarFn::constant(0.0)).unwrap_err();
        assert!(matches!(err, FlowError::Incompatible { .. }));
    }

    #[test]
    fn zero_problem_stays_zero() {
        let p = Ibvp::new(disk(), ScalarFn::constant(0.0), ScalarFn::constant(0.0)).unwrap();
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let r = solve_ibvp(&p, &grid, &FlowParams::new(0.1, 0.0).unwrap(), &RunOptions::new(0.05)).unwrap();
        assert!(r.series.lengths_agree() && r.series.all_finite());
        assert_eq!(r.series.len() as u64, r.steps + 1);
        for c in [&r.series.sup_u, &r.series.sup_grad, &r.series.sup_ut, &r.series.ut_sq] {
            assert!(c.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn linear_is_stationary() {
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let r = solve_ibvp(&linear(), &grid, &FlowParams::new(0.05, 0.0).unwrap(), &RunOptions::new(0.1)).unwrap();
        assert!(r.series.sup_ut.iter().all(|v| *v <= 1e-12));
        let steady = relax_to_steady(&linear(), &grid, &FlowParams::new(0.05, 0.0).unwrap(), 1e-8, 10).unwrap();
        assert_eq!(steady.steps, 0);
        assert!(steady.converged);
    }

    #[test]
    fn snapshots_floor_to_completed_steps() {
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let params = FlowParams::new(0.1, 0.3).unwrap();
        let opts = RunOptions::new(0.1).with_snapshots(&[0.0, 0.05, 0.1]);
        let r = solve_ibvp(&linear(), &grid, &params, &opts).unwrap();
        assert_eq!(r.snapshots.len(), 3);
        assert_eq!(r.snapshots[0].t, 0.0);
        assert!(r.snapshots[1].t <= 0.05 + 1e-12 && r.snapshots[1].t > 0.05 - r.dt);
        assert!((r.snapshots[2].t - 0.1).abs() < 1e-12);
        assert!((r.final_time() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn budget_and_horizon_checked() {
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let params = FlowParams::new(0.1, 0.0).unwrap();
        let mut opts = RunOptions::new(1.0);
        opts.step_budget = 3;
        assert!(matches!(solve_ibvp(&linear(), &grid, &params, &opts), Err(FlowError::StepBudget { .. })));
        assert!(solve_ibvp(&linear(), &grid, &params, &RunOptions::new(-1.0)).is_err());
        assert!(relax_to_steady(&linear(), &grid, &params, 0.0, 10).is_err());
    }

    #[test]
    fn blow_up_returns_partial_report() {
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let mut params = FlowParams::new(0.1, 0.0).unwrap();
        params.dt_override = Some(0.05);
        let bump = ScalarFn::new("bump", |x| x[0] + 0.5 * (1.0 - x[0] * x[0] - x[1] * x[1]).powi(2));
        let p = Ibvp::new(disk(), ScalarFn::coordinate(0), bump).unwrap();
        match solve_ibvp(&p, &grid, &params, &RunOptions::new(500.0)) {
            Err(FlowError::BlowUp { partial, step, .. }) => {
                assert!(partial.dt_warning);
                assert_eq!(partial.series.len() as u64, step);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn continuation_preconditions() {
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let params = FlowParams::new(0.2, 0.0).unwrap();
        assert!(epsilon_continuation(&linear(), &grid, &[0.1], &params, 0.1).is_err());
        assert!(epsilon_continuation(&linear(), &grid, &[0.1, 0.2, 0.05], &params, 0.1).is_err());
        let t = epsilon_continuation(&linear(), &grid, &[0.2, 0.1, 0.05], &params, 0.1).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.sup_diff <= 1e-10));
    }
}
