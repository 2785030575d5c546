//! Boundary barriers `ψ± = ±λ d`, the sup-norm bound from a steady
//! comparison field, and co-evolution of ordered data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::ScalarFn;
use crate::flow::{self, FlowError, Ibvp};
use crate::geometry::{DomainSpec, Grid, Point};
use crate::operator::{self, BoundaryTrace, Evaluation, FieldState, FlowParams};

/// Below this the boundary is treated as flat.
pub const MIN_CURVATURE: f64 = 1e-3;
pub const LIPSCHITZ_SAFETY: f64 = 1.5;
const LAMBDA_ITERATIONS: usize = 50;
/// Roundoff allowed when checking that data are ordered.
const ORDER_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("boundary mean curvature bound {0:e} is below {MIN_CURVATURE:e}")]
    FlatBoundary(f64),
    #[error("|nu| = {nu} must be below n H0 = {limit}")]
    SpeedTooLarge { nu: f64, limit: f64 },
    #[error("barrier slope did not settle after {LAMBDA_ITERATIONS} updates (last lambda {0})")]
    SlopeDiverged(f64),
    #[error("data not ordered: low exceeds high by {excess:e} at {point:?}")]
    NotOrdered { excess: f64, point: Point },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
pub struct Barrier {
    pub side: Side,
    pub lambda: f64,
    pub rho: f64,
    pub beta: f64,
    pub h0: f64,
    /// Collar nodes `{0 < d < ρ}` (grid node indices).
    pub collar: Vec<usize>,
    /// `ψ` at the collar nodes.
    pub values: Vec<f64>,
    /// Bound on sup |u| the inner-collar condition was built from.
    pub sup_bound: f64,
    /// |ν| violates the stricter `n H0 / (n+1)` assumption (still below `n H0`).
    pub exceeds_standing_bound: bool,
}

impl Barrier {
    /// `ψ` at a point at distance `d` from the boundary.
    pub fn psi(&self, d: f64) -> f64 {
        match self.side {
            Side::Upper => self.lambda * d,
            Side::Lower => -self.lambda * d,
        }
    }

    /// Slope |∇ψ|.
    pub fn gradient_norm(&self) -> f64 {
        self.lambda
    }

    /// Largest amount by which `u` leaves the side of `h + ψ` it should be on
    /// over the collar (0 when respected).
    pub fn violation(&self, grid: &Grid, h: &ScalarFn, state: &FieldState) -> f64 {
        self.collar
            .iter()
            .zip(&self.values)
            .map(|(&n, &psi)| {
                let gap = state.values[n] - h.eval(&grid.position(n)) - psi;
                match self.side {
                    Side::Upper => gap.max(0.0),
                    Side::Lower => (-gap).max(0.0),
                }
            })
            .fold(0.0, f64::max)
    }
}

fn collar_nodes(grid: &Grid, rho: f64) -> Vec<usize> {
    grid.unknowns().iter().copied().filter(|&n| grid.distance(n) < rho).collect()
}

/// 1.5 × the largest difference quotient of `f` over collar node pairs
/// closer than `3h`.
fn collar_lipschitz(grid: &Grid, collar: &[usize], f: &ScalarFn) -> f64 {
    let in_collar: std::collections::HashSet<usize> = collar.iter().copied().collect();
    let counts = grid.counts();
    let dim = grid.dim();
    let reach = 3i64;
    let mut best = 0.0f64;
    for &n in collar {
        let ijk = grid.multi_index(n);
        let x = grid.position(n);
        let fx = f.eval(&x);
        let kz = if dim == 3 { reach } else { 0 };
        for di in -reach..=reach {
            for dj in -reach..=reach {
                for dk in -kz..=kz {
                    if di * di + dj * dj + dk * dk > reach * reach || (di, dj, dk) <= (0, 0, 0) {
                        continue;
                    }
                    let m = [ijk[0] as i64 + di, ijk[1] as i64 + dj, ijk[2] as i64 + dk];
                    if (0..dim).any(|a| m[a] < 0 || m[a] >= counts[a] as i64) {
                        continue;
                    }
                    let other = grid.index([m[0] as usize, m[1] as usize, m[2] as usize]);
                    if !in_collar.contains(&other) {
                        continue;
                    }
                    let y = grid.position(other);
                    let dist = crate::geometry::norm(&[x[0] - y[0], x[1] - y[1], x[2] - y[2]]);
                    best = best.max((fx - f.eval(&y)).abs() / dist);
                }
            }
        }
    }
    LIPSCHITZ_SAFETY * best
}

/// Field `h + s λ d` on the whole box (exterior nodes carry `h`).
fn shifted_field(grid: &Grid, h: &ScalarFn, slope: f64) -> Vec<f64> {
    (0..grid.node_count())
        .map(|n| {
            let x = grid.position(n);
            let d = grid.distance(n).max(0.0);
            h.eval(&x) + if grid.slot(n).is_some() { slope * d } else { 0.0 }
        })
        .collect()
}

/// `𝔏(h + ψ) = −rate(h + ψ)` at each collar node, for an upper barrier of slope `lambda`.
fn upper_residuals(grid: &Grid, h: &ScalarFn, params: &FlowParams, collar: &[usize], lambda: f64) -> Vec<f64> {
    let values = shifted_field(grid, h, lambda);
    let trace = BoundaryTrace::new(grid, h);
    collar
        .iter()
        .map(|&n| {
            let slot = grid.slot(n).expect("collar nodes are unknowns");
            let d = operator::local_derivatives(grid, &values, &trace, slot);
            -operator::rate_from_derivatives(&d.gradient, &d.hessian, grid.dim(), params)
        })
        .collect()
}

fn sup_on_boundary(domain: &DomainSpec, f: &ScalarFn) -> Result<f64, BarrierError> {
    Ok(domain
        .boundary_samples(flow::COMPATIBILITY_SAMPLES)
        .map_err(FlowError::from)?
        .iter()
        .map(|p| f.eval(p).abs())
        .fold(0.0, f64::max))
}

fn sup_on_grid(grid: &Grid, f: &ScalarFn) -> f64 {
    grid.unknowns().iter().map(|&n| f.eval(&grid.position(n)).abs()).fold(0.0, f64::max)
}

/// Upper barrier for `u − h`. `sup_bound` bounds sup |u| over the run; when
/// absent, `max(‖g‖∞, ‖h‖∞)` is used.
pub fn build_upper_barrier(
    problem: &Ibvp,
    grid: &Grid,
    params: &FlowParams,
    sup_bound: Option<f64>,
) -> Result<Barrier, BarrierError> {
    let domain = &problem.domain;
    let h0 = domain.boundary_mean_curvature_bound();
    if h0 < MIN_CURVATURE {
        return Err(BarrierError::FlatBoundary(h0));
    }
    let n = domain.boundary_dim() as f64;
    let nu = (params.sigma * params.nu).abs();
    let limit = n * h0;
    if nu >= limit {
        return Err(BarrierError::SpeedTooLarge { nu: params.nu, limit });
    }
    let rho = (0.5 / h0).min(domain.reach());
    let collar = collar_nodes(grid, rho);
    let diff = problem.g.plus(&problem.h.negated());
    let beta = collar_lipschitz(grid, &collar, &diff);
    let h_sup = sup_on_grid(grid, &problem.h).max(sup_on_boundary(domain, &problem.h)?);
    let sup_bound = sup_bound.unwrap_or_else(|| sup_on_grid(grid, &problem.g).max(h_sup));
    let lambda_data = 1f64.max(beta).max(beta * domain.diameter() / rho).max((sup_bound + h_sup) / rho);

    let mut lambda = lambda_data;
    for _ in 0..LAMBDA_ITERATIONS {
        let res = upper_residuals(grid, &problem.h, params, &collar, lambda);
        let c_res = res.iter().map(|r| (n * lambda * h0 - lambda * nu - r).max(0.0)).fold(0.0, f64::max);
        let needed = lambda_data.max((c_res + 1.0) / (limit - nu));
        let min_res = res.iter().copied().fold(f64::INFINITY, f64::min);
        if needed <= lambda && min_res >= 0.0 {
            let values = collar.iter().map(|&c| lambda * grid.distance(c)).collect();
            return Ok(Barrier {
                side: Side::Upper,
                lambda,
                rho,
                beta,
                h0,
                collar,
                values,
                sup_bound,
                exceeds_standing_bound: nu >= limit / (n + 1.0),
            });
        }
        lambda = needed.max(lambda * 1.25);
    }
    Err(BarrierError::SlopeDiverged(lambda))
}

/// Lower barrier, built as the negated upper barrier of `(−h, −g)` at `−ν`.
pub fn build_lower_barrier(
    problem: &Ibvp,
    grid: &Grid,
    params: &FlowParams,
    sup_bound: Option<f64>,
) -> Result<Barrier, BarrierError> {
    let mirrored = Ibvp { domain: problem.domain.clone(), h: problem.h.negated(), g: problem.g.negated(), mismatch: problem.mismatch };
    let mut b = build_upper_barrier(&mirrored, grid, &params.with_nu(-params.nu), sup_bound)?;
    b.side = Side::Lower;
    for v in &mut b.values {
        *v = -*v;
    }
    Ok(b)
}

/// Minimum over the collar of `±𝔏(h + ψ±)`; non-negative certifies the barrier.
pub fn barrier_supersolution_residual(barrier: &Barrier, grid: &Grid, h: &ScalarFn, params: &FlowParams) -> f64 {
    let res = match barrier.side {
        Side::Upper => upper_residuals(grid, h, params, &barrier.collar, barrier.lambda),
        Side::Lower => upper_residuals(grid, &h.negated(), &params.with_nu(-params.nu), &barrier.collar, barrier.lambda),
    };
    res.into_iter().fold(f64::INFINITY, f64::min)
}

/// Smallest margin of `ψ` over `g − h` on the collar at t = 0 and over
/// `sup_bound + |h|` at the inner edge; non-negative when the barrier
/// dominates on the collar's parabolic boundary.
pub fn parabolic_boundary_margin(barrier: &Barrier, grid: &Grid, problem: &Ibvp) -> f64 {
    let mut margin = f64::INFINITY;
    for (&n, &psi) in barrier.collar.iter().zip(&barrier.values) {
        let x = grid.position(n);
        let gap = problem.g.eval(&x) - problem.h.eval(&x);
        margin = margin.min(match barrier.side {
            Side::Upper => psi - gap,
            Side::Lower => gap - psi,
        });
    }
    let h_sup = sup_on_grid(grid, &problem.h);
    margin.min(barrier.lambda * barrier.rho - barrier.sup_bound - h_sup)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupNormBound {
    /// `max(v) + κ`, over the steady fields for `ν` and `−ν`.
    pub bound: f64,
    pub kappa: f64,
    pub v_max: f64,
    pub converged: bool,
}

impl SupNormBound {
    pub fn available(&self) -> bool {
        self.converged
    }
}

/// Relaxes the problem with boundary and initial data 1 for `ν` and `−ν`;
/// the steady fields shifted by `κ = max(‖g‖∞, ‖h‖∞)` dominate `±u`.
pub fn sup_norm_bound(
    problem: &Ibvp,
    grid: &Grid,
    params: &FlowParams,
    tol: f64,
    budget: u64,
) -> Result<SupNormBound, BarrierError> {
    let h0 = problem.domain.boundary_mean_curvature_bound();
    if h0 < MIN_CURVATURE {
        return Err(BarrierError::FlatBoundary(h0));
    }
    let kappa = sup_on_grid(grid, &problem.g)
        .max(sup_on_grid(grid, &problem.h))
        .max(sup_on_boundary(&problem.domain, &problem.h)?);
    let one = ScalarFn::constant(1.0);
    let unit = Ibvp::new(problem.domain.clone(), one.clone(), one)?;
    let mut v_max = 1.0f64;
    let mut converged = true;
    let speeds: &[f64] = if params.nu == 0.0 { &[0.0] } else { &[params.nu, -params.nu] };
    for &nu in speeds {
        let r = flow::relax_to_steady(&unit, grid, &params.with_nu(nu), tol, budget)?;
        converged &= r.converged;
        v_max = v_max.max(r.state.sup_abs(grid));
    }
    Ok(SupNormBound { bound: v_max + kappa, kappa, v_max, converged })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// max over steps and unknowns of `(u_low − u_high)+`.
    pub max_violation: f64,
    pub steps: u64,
}

impl ComparisonReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

fn check_ordered(low: &Ibvp, high: &Ibvp, grid: &Grid) -> Result<(), BarrierError> {
    let mut pts: Vec<Point> = grid.unknowns().iter().map(|&n| grid.position(n)).collect();
    pts.extend_from_slice(grid.boundary_points());
    let mut worst = (0.0f64, [0.0; 3]);
    for p in &pts {
        let e = low.g.eval(p) - high.g.eval(p);
        if e > worst.0 {
            worst = (e, *p);
        }
    }
    for p in grid.boundary_points().iter().chain(&low.domain.boundary_samples(flow::COMPATIBILITY_SAMPLES).map_err(FlowError::from)?) {
        let e = low.h.eval(p) - high.h.eval(p);
        if e > worst.0 {
            worst = (e, *p);
        }
    }
    if worst.0 > ORDER_SLACK {
        return Err(BarrierError::NotOrdered { excess: worst.0, point: worst.1 });
    }
    Ok(())
}

/// Evolves both problems in lockstep and records the worst ordering violation.
pub fn comparison_experiment(
    low: &Ibvp,
    high: &Ibvp,
    grid: &Grid,
    params: &FlowParams,
    horizon: f64,
) -> Result<ComparisonReport, BarrierError> {
    params.validate().map_err(FlowError::from)?;
    check_ordered(low, high, grid)?;
    let dt0 = operator::stable_dt(params, grid).dt;
    let n = (horizon / dt0 - 1e-9).ceil().max(0.0) as u64;
    let dt = if n == 0 { dt0 } else { horizon / n as f64 };
    let (tl, th) = (low.trace(grid), high.trace(grid));
    let (mut sl, mut sh) = (low.initial_state(grid), high.initial_state(grid));
    let (mut el, mut eh) = (Evaluation::default(), Evaluation::default());
    let gap = |a: &FieldState, b: &FieldState| {
        grid.unknowns().iter().map(|&n| (a.values[n] - b.values[n]).max(0.0)).fold(0.0, f64::max)
    };
    let mut worst = gap(&sl, &sh);
    for _ in 0..n {
        el.compute(grid, params, &tl, &sl.values);
        eh.compute(grid, params, &th, &sh.values);
        operator::advance(grid, &tl, &el, dt, &mut sl.values);
        operator::advance(grid, &th, &eh, dt, &mut sh.values);
        let v = gap(&sl, &sh);
        if !v.is_finite() {
            return Err(FlowError::InvalidArgument("non-finite field during co-evolution".into()).into());
        }
        worst = worst.max(v);
    }
    Ok(ComparisonReport { max_violation: worst, steps: n })
}

/// Seeded ordered pair: a random smooth base and the base raised by a
/// positive constant plus non-negative Gaussian bumps.
pub fn ordered_pair(domain: &DomainSpec, seed: u64, index: u64) -> Result<(Ibvp, Ibvp), BarrierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let dim = domain.dim();
    let c = domain.center();
    let ext = domain.half_extents();
    let mut p = [0.0; 3];
    for a in p.iter_mut().take(dim) {
        *a = rng.gen_range(-1.0..1.0);
    }
    let q = rng.gen_range(-0.5..0.5);
    let base = ScalarFn::new("base", move |x| p[0] * x[0] + p[1] * x[1] + p[2] * x[2] + q * x[0] * x[1]);
    let shift = rng.gen_range(0.05..0.5);
    let bumps: Vec<(Point, f64, f64)> = (0..3)
        .map(|_| {
            let mut x = c;
            for a in 0..dim {
                x[a] += rng.gen_range(-0.7..0.7) * ext[a];
            }
            (x, rng.gen_range(0.0..0.5), rng.gen_range(0.15..0.5))
        })
        .collect();
    let b2 = base.clone();
    let high = ScalarFn::new("high", move |x| {
        let mut v = b2.eval(x) + shift;
        for (xk, ak, sk) in &bumps {
            let r2 = (x[0] - xk[0]).powi(2) + (x[1] - xk[1]).powi(2) + (x[2] - xk[2]).powi(2);
            v += ak * (-r2 / (sk * sk)).exp();
        }
        v
    });
    Ok((
        Ibvp::new(domain.clone(), base.clone(), base)?,
        Ibvp::new(domain.clone(), high.clone(), high)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::RunOptions;

    fn disk() -> DomainSpec {
        DomainSpec::ball(1.0, 2).unwrap()
    }

    fn problem(h: ScalarFn) -> Ibvp {
        Ibvp::new(disk(), h.clone(), h).unwrap()
    }

    #[test]
    fn zero_data_gives_floor_slope() {
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let b = build_upper_barrier(&problem(ScalarFn::constant(0.0)), &grid, &FlowParams::new(0.05, 0.0).unwrap(), None).unwrap();
        assert_eq!(b.beta, 0.0);
        assert_eq!(b.lambda, 1.0);
        assert_eq!(b.rho, 0.5);
        let m = barrier_supersolution_residual(&b, &grid, &ScalarFn::constant(0.0), &FlowParams::new(0.05, 0.0).unwrap());
        // 𝔏ψ = λ/r on the collar, smallest as r → 1.
        assert!((m - 1.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn linear_data_barrier() {
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let p = problem(ScalarFn::coordinate(0));
        for nu in [0.0, 0.3] {
            let params = FlowParams::new(0.05, nu).unwrap();
            let b = build_upper_barrier(&p, &grid, &params, None).unwrap();
            assert!(b.beta <= 2.0 && b.lambda.is_finite());
            assert_eq!(b.rho, 0.5);
            assert!(barrier_supersolution_residual(&b, &grid, &p.h, &params) >= 0.0);
            assert!(parabolic_boundary_margin(&b, &grid, &p) >= 0.0);
            let lo = build_lower_barrier(&p, &grid, &params, None).unwrap();
            assert!(barrier_supersolution_residual(&lo, &grid, &p.h, &params) >= 0.0);
            assert!(lo.values.iter().all(|v| *v <= 0.0));
        }
    }

    #[test]
    fn weak_slope_fails_residual() {
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let p = problem(ScalarFn::coordinate(0));
        let params = FlowParams::new(0.05, 0.3).unwrap();
        let mut b = build_upper_barrier(&p, &grid, &params, None).unwrap();
        b.lambda = 1e-6;
        assert!(barrier_supersolution_residual(&b, &grid, &p.h, &params) < 0.0);
    }

    #[test]
    fn preconditions() {
        let stadium = DomainSpec::stadium(0.5, 1.5, 0.25, 2).unwrap();
        let grid = Grid::build(&stadium, 1.0 / 16.0).unwrap();
        let z = ScalarFn::constant(0.0);
        let p = Ibvp::new(stadium, z.clone(), z).unwrap();
        assert!(matches!(
            build_upper_barrier(&p, &grid, &FlowParams::new(0.05, 0.0).unwrap(), None),
            Err(BarrierError::FlatBoundary(_))
        ));
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let p = problem(ScalarFn::constant(0.0));
        assert!(matches!(
            build_upper_barrier(&p, &grid, &FlowParams::new(0.05, 1.2).unwrap(), None),
            Err(BarrierError::SpeedTooLarge { .. })
        ));
        let b = build_upper_barrier(&p, &grid, &FlowParams::new(0.05, 0.6).unwrap(), None).unwrap();
        assert!(b.exceeds_standing_bound);
    }

    #[test]
    fn sup_bound_nu_zero_and_kappa() {
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let p = problem(ScalarFn::coordinate(0));
        let s = sup_norm_bound(&p, &grid, &FlowParams::new(0.05, 0.0).unwrap(), 1e-8, 100_000).unwrap();
        assert_eq!(s.v_max, 1.0);
        assert!((s.bound - 1.0 - s.kappa).abs() < 1e-15);
        assert!(s.kappa <= 1.0 && s.kappa > 0.99);
        let two = problem(ScalarFn::new("2+x", |x| 2.0 + 0.0 * x[0]));
        let s = sup_norm_bound(&two, &grid, &FlowParams::new(0.05, 0.3).unwrap(), 1e-8, 1_000_000).unwrap();
        assert_eq!(s.kappa, 2.0);
        assert!(s.converged && s.v_max >= 1.0 && s.v_max < 1.1);
    }

    #[test]
    fn comparison_basics() {
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let params = FlowParams::new(0.05, 0.0).unwrap();
        let hi = problem(ScalarFn::coordinate(0));
        let lo = problem(ScalarFn::new("x-1", |x| x[0] - 1.0));
        let r = comparison_experiment(&lo, &hi, &grid, &params, 0.05).unwrap();
        assert_eq!(r.max_violation, 0.0);
        let r = comparison_experiment(&hi, &hi, &grid, &params, 0.05).unwrap();
        assert_eq!(r.max_violation, 0.0);
        assert!(matches!(comparison_experiment(&hi, &lo, &grid, &params, 0.05), Err(BarrierError::NotOrdered { .. })));
        let bump = ScalarFn::new("bump", |x| x[0] + 0.5 * (1.0 - x[0] * x[0] - x[1] * x[1]));
        let b = Ibvp::new(disk(), ScalarFn::coordinate(0), bump).unwrap();
        let r = comparison_experiment(&hi, &b, &grid, &params, 0.05).unwrap();
        assert!(r.passes(1e-10));
    }

    #[test]
    fn ordered_pairs_are_reproducible() {
        let grid = Grid::build(&disk(), 1.0 / 8.0).unwrap();
        let (a1, b1) = ordered_pair(&disk(), 7, 3).unwrap();
        let (a2, b2) = ordered_pair(&disk(), 7, 3).unwrap();
        let x = [0.3, -0.2, 0.0];
        assert_eq!(a1.g.eval(&x), a2.g.eval(&x));
        assert_eq!(b1.g.eval(&x), b2.g.eval(&x));
        assert!(b1.g.eval(&x) > a1.g.eval(&x));
        assert!(check_ordered(&a1, &b1, &grid).is_ok());
    }

    #[test]
    fn collar_comparison() {
        let grid = Grid::build(&disk(), 1.0 / 16.0).unwrap();
        let params = FlowParams::new(0.05, 0.3).unwrap();
        let p = problem(ScalarFn::coordinate(0));
        let b = build_upper_barrier(&p, &grid, &params, None).unwrap();
        let r = flow::solve_ibvp(&p, &grid, &params, &RunOptions::new(0.2).with_snapshots(&[0.1, 0.2])).unwrap();
        for s in &r.snapshots {
            assert!(b.violation(&grid, &p.h, s) <= 10.0 * grid.spacing());
        }
    }
}
