//! Finite-difference discretization of the regularized level-set operator
//!
//! ```text
//! u_t = (δ_kl − σ² u_k u_l / (ε² + σ²|∇u|²)) u_kl + σ ν sqrt(ε² + σ²|∇u|²)
//! ```
//!
//! in nondivergence form, with central differences in the interior and
//! Shortley–Weller closures at near-boundary nodes, stepped by forward Euler.

use thiserror::Error;

use crate::data::ScalarFn;
use crate::geometry::{Arm, Grid, Point};

pub const DEFAULT_CFL: f64 = 0.25;
/// Largest `dt (n+1) / h²` accepted without a stability warning.
pub const MAX_STABLE_CFL: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("invalid flow parameter: {0}")]
    InvalidParams(String),
    #[error("non-finite value at node {node} (position {position:?}) at t = {time}")]
    NonFinite { node: usize, position: Point, time: f64 },
}

/// Knobs of the regularized operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub epsilon: f64,
    pub nu: f64,
    /// Homotopy weight; 1 is the only value with flow semantics.
    pub sigma: f64,
    pub cfl_factor: f64,
    pub dt_override: Option<f64>,
}

impl FlowParams {
    pub fn new(epsilon: f64, nu: f64) -> Result<Self, OperatorError> {
        let p = Self { epsilon, nu, sigma: 1.0, cfl_factor: DEFAULT_CFL, dt_override: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let bad = |m: String| Err(OperatorError::InvalidParams(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !self.nu.is_finite() {
            return bad(format!("nu must be finite, got {}", self.nu));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad(format!("sigma must lie in [0, 1], got {}", self.sigma));
        }
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= MAX_STABLE_CFL) {
            return bad(format!("cfl factor must lie in (0, 0.5], got {}", self.cfl_factor));
        }
        if let Some(dt) = self.dt_override {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt override must be positive, got {dt}"));
            }
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    /// Rate of a flat (zero-gradient) field: `σ ν ε`.
    pub fn flat_drift(&self) -> f64 {
        self.sigma * self.nu * self.epsilon
    }
}

/// Grid function at a time level. Values are stored for every node of the
/// box; exterior nodes hold the boundary data extension and never enter the
/// stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub values: Vec<f64>,
    pub t: f64,
}

impl FieldState {
    /// Samples `g` at the unknowns and `h` elsewhere, then applies the pin
    /// closures so the initial field is consistent with the scheme.
    pub fn from_data(grid: &Grid, g: &ScalarFn, h: &ScalarFn, trace: &BoundaryTrace) -> Self {
        let values = (0..grid.node_count())
            .map(|node| {
                let x = grid.position(node);
                if grid.slot(node).is_some() {
                    g.eval(&x)
                } else {
                    h.eval(&x)
                }
            })
            .collect();
        let mut s = Self { values, t: 0.0 };
        apply_pins(grid, trace, &mut s.values);
        s
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Largest |u| over the unknowns.
    pub fn sup_abs(&self, grid: &Grid) -> f64 {
        grid.unknowns().iter().map(|&n| self.values[n].abs()).fold(0.0, f64::max)
    }
}

/// Dirichlet values at the boundary crossings of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(grid: &Grid, h: &ScalarFn) -> Self {
        Self { values: grid.boundary_points().iter().map(|p| h.eval(p)).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest deviation of the stored trace from `h` at the crossings.
    pub fn max_error(&self, grid: &Grid, h: &ScalarFn) -> f64 {
        grid.boundary_points().iter().zip(&self.values).map(|(p, v)| (h.eval(p) - v).abs()).fold(0.0, f64::max)
    }
}

pub(crate) fn apply_pins(grid: &Grid, trace: &BoundaryTrace, values: &mut [f64]) {
    for (slot, &node) in grid.unknowns().iter().enumerate() {
        if let Some(pin) = grid.pin(slot) {
            let ub = trace.values[pin.point];
            values[node] = match pin.opposite {
                Some(opp) => (1.0 - pin.weight) * ub + pin.weight * values[opp],
                None => ub,
            };
        }
    }
}

/// First and second derivatives at one unknown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDerivatives {
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
}

pub fn local_derivatives(grid: &Grid, values: &[f64], trace: &BoundaryTrace, slot: usize) -> LocalDerivatives {
    let node = grid.unknowns()[slot];
    let h = grid.spacing();
    let u0 = values[node];
    let mut gradient = [0.0; 3];
    let mut hessian = [[0.0; 3]; 3];
    let arms = grid.arms(slot);
    let side = |arm: &Arm| match *arm {
        Arm::Node(n) => (1.0, values[n]),
        Arm::Boundary { theta, point } => (theta, trace.values[point]),
    };
    for a in 0..grid.dim() {
        let (tm, um) = side(&arms[a][0]);
        let (tp, up) = side(&arms[a][1]);
        if tm == 1.0 && tp == 1.0 {
            gradient[a] = (up - um) / (2.0 * h);
            hessian[a][a] = (up - 2.0 * u0 + um) / (h * h);
        } else {
            gradient[a] = (tm * tm * (up - u0) + tp * tp * (u0 - um)) / (h * tm * tp * (tm + tp));
            hessian[a][a] = 2.0 * ((up - u0) / tp + (um - u0) / tm) / (h * h * (tm + tp));
        }
    }
    let mut pair = 0;
    for a in 0..grid.dim() {
        for b in (a + 1)..grid.dim() {
            let m: f64 = grid.mixed(slot, pair).iter().map(|&(n, c)| c * values[n]).sum();
            hessian[a][b] = m;
            hessian[b][a] = m;
            pair += 1;
        }
    }
    LocalDerivatives { gradient, hessian }
}

/// Pointwise operator value for gradient `p` and Hessian `m`.
#[inline]
pub fn rate_from_derivatives(p: &[f64; 3], m: &[[f64; 3]; 3], dim: usize, params: &FlowParams) -> f64 {
    let s2 = params.sigma * params.sigma;
    let p2: f64 = p[..dim].iter().map(|v| v * v).sum();
    let denom = params.epsilon * params.epsilon + s2 * p2;
    let mut trace = 0.0;
    let mut pmp = 0.0;
    for k in 0..dim {
        trace += m[k][k];
        for l in 0..dim {
            pmp += p[k] * m[k][l] * p[l];
        }
    }
    trace - s2 * pmp / denom + params.sigma * params.nu * denom.sqrt()
}

/// Coefficient tensor `δ − σ² p⊗p / (ε² + σ²|p|²)`.
pub fn diffusion_tensor(p: &[f64; 3], dim: usize, params: &FlowParams) -> [[f64; 3]; 3] {
    let s2 = params.sigma * params.sigma;
    let p2: f64 = p[..dim].iter().map(|v| v * v).sum();
    let denom = params.epsilon * params.epsilon + s2 * p2;
    let mut a = [[0.0; 3]; 3];
    for k in 0..dim {
        for l in 0..dim {
            a[k][l] = if k == l { 1.0 } else { 0.0 } - s2 * p[k] * p[l] / denom;
        }
    }
    a
}

/// Discrete gradient at every unknown (indexed by slot).
pub fn gradient(state: &FieldState, grid: &Grid, trace: &BoundaryTrace) -> Vec<[f64; 3]> {
    (0..grid.unknowns().len()).map(|s| local_derivatives(grid, &state.values, trace, s).gradient).collect()
}

/// Operator value at every unknown (indexed by slot), evaluated by the
/// stencil at each node including pinned ones.
pub fn regularized_rhs(state: &FieldState, grid: &Grid, params: &FlowParams, trace: &BoundaryTrace) -> Vec<f64> {
    (0..grid.unknowns().len())
        .map(|s| {
            let d = local_derivatives(grid, &state.values, trace, s);
            rate_from_derivatives(&d.gradient, &d.hessian, grid.dim(), params)
        })
        .collect()
}

/// Time step of the explicit scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStep {
    pub dt: f64,
    /// `dt` exceeds `0.5 h² / (n+1)`.
    pub exceeds_stability: bool,
}

pub fn stable_dt(params: &FlowParams, grid: &Grid) -> TimeStep {
    let h2 = grid.spacing() * grid.spacing();
    let limit = MAX_STABLE_CFL * h2 / grid.dim() as f64;
    let dt = params.dt_override.unwrap_or(params.cfl_factor * h2 / grid.dim() as f64);
    TimeStep { dt, exceeds_stability: dt > limit * (1.0 + 1e-12) }
}

/// Gradients and applied rates of one field, reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub gradient: Vec<[f64; 3]>,
    pub rate: Vec<f64>,
}

impl Evaluation {
    /// Fills gradients and the rates the scheme applies: the operator at free
    /// unknowns, the pin closure's time derivative at pinned ones.
    pub fn compute(&mut self, grid: &Grid, params: &FlowParams, trace: &BoundaryTrace, values: &[f64]) {
        let n = grid.unknowns().len();
        self.gradient.resize(n, [0.0; 3]);
        self.rate.resize(n, 0.0);
        let dim = grid.dim();
        for slot in 0..n {
            let d = local_derivatives(grid, values, trace, slot);
            self.gradient[slot] = d.gradient;
            self.rate[slot] = rate_from_derivatives(&d.gradient, &d.hessian, dim, params);
        }
        for slot in 0..n {
            if let Some(pin) = grid.pin(slot) {
                self.rate[slot] = match pin.opposite {
                    Some(opp) => pin.weight * self.rate[grid.slot(opp).expect("pin opposite is an unknown")],
                    None => 0.0,
                };
            }
        }
    }

    pub fn first_non_finite(&self, grid: &Grid, values: &[f64]) -> Option<usize> {
        grid.unknowns()
            .iter()
            .enumerate()
            .find(|&(s, &node)| !self.rate[s].is_finite() || !values[node].is_finite())
            .map(|(_, &node)| node)
    }

    pub fn sup_rate(&self) -> f64 {
        self.rate.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn sup_gradient(&self) -> f64 {
        self.gradient.iter().map(|g| crate::geometry::norm(g)).fold(0.0, f64::max)
    }
}

/// Advances `values` by one forward-Euler step using precomputed rates.
pub(crate) fn advance(grid: &Grid, trace: &BoundaryTrace, eval: &Evaluation, dt: f64, values: &mut [f64]) {
    for (slot, &node) in grid.unknowns().iter().enumerate() {
        if grid.pin(slot).is_none() {
            values[node] += dt * eval.rate[slot];
        }
    }
    apply_pins(grid, trace, values);
}

/// One forward-Euler step.
pub fn step(
    state: &FieldState,
    grid: &Grid,
    params: &FlowParams,
    trace: &BoundaryTrace,
) -> Result<FieldState, OperatorError> {
    let dt = stable_dt(params, grid).dt;
    let mut eval = Evaluation::default();
    eval.compute(grid, params, trace, &state.values);
    if let Some(node) = eval.first_non_finite(grid, &state.values) {
        return Err(OperatorError::NonFinite { node, position: grid.position(node), time: state.t });
    }
    let mut next = state.clone();
    advance(grid, trace, &eval, dt, &mut next.values);
    next.t += dt;
    if let Some(&node) = grid.unknowns().iter().find(|&&n| !next.values[n].is_finite()) {
        return Err(OperatorError::NonFinite { node, position: grid.position(node), time: next.t });
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainSpec, NodeClass};
    use proptest::prelude::*;

    fn unit_disk(h: f64) -> Grid {
        Grid::build(&DomainSpec::ball(1.0, 2).unwrap(), h).unwrap()
    }

    fn state_of(grid: &Grid, f: &ScalarFn) -> (FieldState, BoundaryTrace) {
        let trace = BoundaryTrace::new(grid, f);
        (FieldState::from_data(grid, f, f, &trace), trace)
    }

    #[test]
    fn params_validation() {
        assert!(FlowParams::new(0.0, 0.0).is_err());
        assert!(FlowParams::new(1.0, 0.0).is_err());
        let mut p = FlowParams::new(0.1, 0.2).unwrap();
        p.sigma = 1.5;
        assert!(p.validate().is_err());
        p.sigma = 1.0;
        p.cfl_factor = 0.6;
        assert!(p.validate().is_err());
    }

    #[test]
    fn constant_and_linear_gradients() {
        let grid = unit_disk(1.0 / 16.0);
        let (s, tr) = state_of(&grid, &ScalarFn::constant(3.0));
        assert!(gradient(&s, &grid, &tr).iter().all(|g| g.iter().all(|c| *c == 0.0)));
        let lin = ScalarFn::new("lin", |x| 0.7 * x[0] - 1.3 * x[1]);
        let (s, tr) = state_of(&grid, &lin);
        for g in gradient(&s, &grid, &tr) {
            assert!((g[0] - 0.7).abs() < 1e-12 && (g[1] + 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient_at_node() {
        let grid = unit_disk(1.0 / 32.0);
        let q = ScalarFn::new("|x|^2", |x| x[0] * x[0] + x[1] * x[1]);
        let (s, tr) = state_of(&grid, &q);
        let node = grid.index([40, 40, 0]);
        assert_eq!(grid.position(node), [0.25, 0.25, 0.0]);
        let g = gradient(&s, &grid, &tr)[grid.slot(node).unwrap()];
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_rate_is_pure_source() {
        let grid = unit_disk(1.0 / 16.0);
        let params = FlowParams::new(0.2, 0.3).unwrap();
        let lin = ScalarFn::new("lin", |x| 0.6 * x[0] + 0.8 * x[1]);
        let (s, tr) = state_of(&grid, &lin);
        let expect = 0.3 * (0.04f64 + 1.0).sqrt();
        for r in regularized_rhs(&s, &grid, &params, &tr) {
            assert!((r - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_rate_closed_form() {
        // Oracle: grad u = 2x, D^2u = 2I gives 4 - 8 r^2 / (eps^2 + 4 r^2).
        let grid = unit_disk(1.0 / 32.0);
        let params = FlowParams::new(0.1, 0.0).unwrap();
        let q = ScalarFn::new("|x|^2", |x| x[0] * x[0] + x[1] * x[1]);
        let (s, tr) = state_of(&grid, &q);
        let rates = regularized_rhs(&s, &grid, &params, &tr);
        let node = grid.index([48, 32, 0]);
        assert_eq!(grid.position(node), [0.5, 0.0, 0.0]);
        let r = rates[grid.slot(node).unwrap()];
        assert!((r - 2.01980198019802).abs() < 1e-12, "{r}");
        let small = FlowParams::new(1e-6, 0.0).unwrap();
        let r = regularized_rhs(&s, &grid, &small, &tr)[grid.slot(node).unwrap()];
        assert!((r - 2.0).abs() < 1e-10);
    }

    #[test]
    fn dt_examples() {
        let params = FlowParams::new(0.1, 0.0).unwrap();
        let g = unit_disk(1.0 / 32.0);
        let dt = stable_dt(&params, &g);
        assert!((dt.dt - 0.25 / (2.0 * 1024.0)).abs() < 1e-18 && !dt.exceeds_stability);
        let g3 = Grid::build(&DomainSpec::ball(1.0, 3).unwrap(), 1.0 / 16.0).unwrap();
        let dt = stable_dt(&params, &g3);
        assert!((dt.dt - 0.25 / 256.0 / 3.0).abs() < 1e-18);
        let mut over = params;
        over.dt_override = Some(1.0 / 1024.0);
        assert!(stable_dt(&over, &g).exceeds_stability);
    }

    #[test]
    fn constant_state_steps() {
        let grid = unit_disk(1.0 / 16.0);
        let c = ScalarFn::constant(2.5);
        let (s, tr) = state_of(&grid, &c);
        let still = step(&s, &grid, &FlowParams::new(0.1, 0.0).unwrap(), &tr).unwrap();
        assert_eq!(still.values, s.values);
        let params = FlowParams::new(0.1, 0.3).unwrap();
        let dt = stable_dt(&params, &grid).dt;
        let next = step(&s, &grid, &params, &tr).unwrap();
        for (slot, &node) in grid.unknowns().iter().enumerate() {
            let expect = if grid.pin(slot).is_some() { 2.5 } else { 2.5 + dt * 0.1 * 0.3 };
            if grid.class(node) == NodeClass::Interior {
                assert!((next.values[node] - expect).abs() < 1e-15);
            }
        }
        assert!((next.t - dt).abs() < 1e-18);
    }

    #[test]
    fn quadratic_one_step() {
        let grid = unit_disk(1.0 / 32.0);
        let params = FlowParams::new(0.05, 0.0).unwrap();
        let q = ScalarFn::new("|x|^2", |x| x[0] * x[0] + x[1] * x[1]);
        let (s, tr) = state_of(&grid, &q);
        let next = step(&s, &grid, &params, &tr).unwrap();
        let dt = stable_dt(&params, &grid).dt;
        let node = grid.index([48, 32, 0]);
        let expect = 0.25 + dt * (4.0 - 8.0 * 0.25 / (0.0025 + 1.0));
        assert!((next.values[node] - expect).abs() < 1e-14);
    }

    #[test]
    fn boundary_trace_is_exact_after_steps() {
        let grid = unit_disk(1.0 / 16.0);
        let h = ScalarFn::new("h", |x| x[0] * x[1] + x[0]);
        let tr = BoundaryTrace::new(&grid, &h);
        let mut s = FieldState::from_data(&grid, &h, &h, &tr);
        for _ in 0..5 {
            s = step(&s, &grid, &FlowParams::new(0.1, 0.2).unwrap(), &tr).unwrap();
            assert!(tr.max_error(&grid, &h) <= 1e-12);
        }
    }

    #[test]
    fn non_finite_reported() {
        let grid = unit_disk(1.0 / 8.0);
        let z = ScalarFn::constant(0.0);
        let (mut s, tr) = state_of(&grid, &z);
        let node = grid.unknowns()[grid.unknowns().len() / 2];
        s.values[node] = f64::NAN;
        let err = step(&s, &grid, &FlowParams::new(0.1, 0.0).unwrap(), &tr).unwrap_err();
        assert!(matches!(err, OperatorError::NonFinite { .. }));
    }

    proptest! {
        #[test]
        fn diffusion_tensor_eigenvalues_in_unit_interval(
            p0 in -50.0f64..50.0, p1 in -50.0f64..50.0, p2 in -50.0f64..50.0, eps in 0.001f64..0.99, sigma in 0.0f64..1.0
        ) {
            let mut params = FlowParams::new(eps, 0.0).unwrap();
            params.sigma = sigma;
            let a = diffusion_tensor(&[p0, p1, p2], 3, &params);
            let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
            let eig = m.symmetric_eigenvalues();
            let p2n = p0 * p0 + p1 * p1 + p2 * p2;
            let lower = eps * eps / (eps * eps + sigma * sigma * p2n);
            for e in eig.iter() {
                prop_assert!(*e > 0.0 && *e <= 1.0 + 1e-12);
                prop_assert!(*e >= lower - 1e-12);
            }
        }
    }
}
