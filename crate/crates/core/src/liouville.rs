//! Flatness of the solution on the plateau of axially monotone data in a
//! domain with a straight section, with the envelopes that sandwich it.

use thiserror::Error;

use crate::data::ScalarFn;
use crate::flow::{self, FlowError, Ibvp, RunOptions};
use crate::geometry::{DomainSpec, Grid, Point, Shape};
use crate::operator::{FieldState, FlowParams};
use crate::verify::{self, Mode, ProbeOptions, VerifyError, Violation};

/// Axial samples used for the data checks and the envelope domination test.
pub const AXIAL_SAMPLES: usize = 1000;
const CROSS_SAMPLES: usize = 33;
const MAX_HALVINGS: usize = 40;
/// Per-step slack on axial monotonicity.
pub const MONOTONE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LiouvilleError {
    #[error("domain must be a stadium, got {0}")]
    NotCylindrical(&'static str),
    #[error("plateau start m + delta = {end} must lie inside the straight section (< {limit})")]
    ShiftTooLarge { end: f64, limit: f64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("initial data not non-decreasing along the axis at {0:?}")]
    NotMonotone(Point),
    #[error("initial data differs from the plateau value at {0:?}")]
    PlateauBroken(Point),
    #[error("no ramp steepness keeps the lower envelope under the data (violated at tau = {tau})")]
    EnvelopeDomination { tau: f64 },
    #[error("speed must be non-negative, got {0}")]
    NegativeSpeed(f64),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone)]
pub struct CylinderProblem {
    pub ibvp: Ibvp,
    /// Half-length of the plateau start.
    pub m: f64,
    pub lambda: f64,
    pub delta: f64,
}

fn axis(domain: &DomainSpec) -> usize {
    domain.dim() - 1
}

/// Cross-section sample points `x′` at axial position `tau` that lie in the domain.
fn cross_section(domain: &DomainSpec, tau: f64) -> Vec<Point> {
    let ext = domain.half_extents();
    let c = domain.center();
    let ax = axis(domain);
    let steps: Vec<f64> = (0..CROSS_SAMPLES).map(|i| -1.0 + 2.0 * i as f64 / (CROSS_SAMPLES - 1) as f64).collect();
    let mut pts = Vec::new();
    let others: Vec<f64> = if domain.dim() == 3 { steps.clone() } else { vec![0.0] };
    for &s in &steps {
        for &r in &others {
            let mut x = c;
            x[0] = c[0] + 0.999 * s * ext[0];
            if domain.dim() == 3 {
                x[1] = c[1] + 0.999 * r * ext[1];
            }
            x[ax] = tau;
            if domain.contains(&x) {
                pts.push(x);
            }
        }
    }
    pts
}

fn axial_range(domain: &DomainSpec) -> (f64, f64) {
    let ax = axis(domain);
    let c = domain.center()[ax];
    let e = domain.half_extents()[ax];
    (c - e, c + e)
}

impl CylinderProblem {
    /// Validates the domain, the plateau, axial monotonicity and compatibility
    /// of `g` (used as both boundary and initial data).
    pub fn new(domain: DomainSpec, g: ScalarFn, m: f64, lambda: f64, delta: f64) -> Result<Self, LiouvilleError> {
        let straight = match domain.shape() {
            Shape::Stadium { straight_half_length, .. } => straight_half_length,
            other => return Err(LiouvilleError::NotCylindrical(other.kind())),
        };
        if !(delta > 0.0 && m.is_finite() && lambda.is_finite()) {
            return Err(LiouvilleError::InvalidArgument(format!("need delta > 0 and finite m, lambda (m = {m}, delta = {delta})")));
        }
        let limit = domain.center()[axis(&domain)] + straight;
        if !(m + delta < limit) {
            return Err(LiouvilleError::ShiftTooLarge { end: m + delta, limit });
        }
        let (lo, hi) = axial_range(&domain);
        let ax = axis(&domain);
        let taus: Vec<f64> = (0..AXIAL_SAMPLES).map(|i| lo + (hi - lo) * i as f64 / (AXIAL_SAMPLES - 1) as f64).collect();
        let base: Vec<Point> = cross_section(&domain, domain.center()[ax]);
        for x in &base {
            let mut prev = f64::NEG_INFINITY;
            for &tau in &taus {
                let mut y = *x;
                y[ax] = tau;
                let v = g.eval(&y);
                if v < prev - 1e-12 {
                    return Err(LiouvilleError::NotMonotone(y));
                }
                if tau >= m && v != lambda {
                    return Err(LiouvilleError::PlateauBroken(y));
                }
                prev = v;
            }
        }
        let ibvp = Ibvp::new(domain, g.clone(), g)?;
        Ok(Self { ibvp, m, lambda, delta })
    }

    /// The standard ramp `min(λ, max(0, λ(τ − m + w)/w))`.
    pub fn ramp(domain: DomainSpec, m: f64, lambda: f64, width: f64, delta: f64) -> Result<Self, LiouvilleError> {
        let ax = axis(&domain);
        let g = ScalarFn::new(format!("ramp(m={m}, lambda={lambda}, w={width})"), move |x| {
            lambda.min((lambda * (x[ax] - m + width) / width).max(0.0))
        });
        Self::new(domain, g, m, lambda, delta)
    }

    pub fn axis(&self) -> usize {
        axis(&self.ibvp.domain)
    }

    /// `max_{x′} g(x′, τ)`, or `None` when the slice misses the domain.
    pub fn max_over_section(&self, tau: f64) -> Option<f64> {
        let pts = cross_section(&self.ibvp.domain, tau);
        pts.iter().map(|p| self.ibvp.g.eval(p)).reduce(f64::max)
    }
}

/// Axial profiles bracketing the data.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub lambda: f64,
    /// End of the lower ramp, `m + δ`.
    pub corner: f64,
    pub delta: f64,
    /// Ramp length of the lower envelope; its slope is `λ / ramp`.
    pub ramp: f64,
    /// Width of the corner smoothing, `δ / 4`.
    pub smoothing: f64,
    /// The lower envelope is the constant λ.
    pub flat_lower: bool,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl EnvelopePair {
    pub fn upper(&self, _tau: f64) -> f64 {
        self.lambda
    }

    pub fn lower(&self, tau: f64) -> f64 {
        if self.flat_lower || tau >= self.corner {
            return self.lambda;
        }
        let s = self.lambda / self.ramp;
        let w = self.smoothing;
        let t0 = self.corner - w;
        if tau >= t0 {
            let x = (tau - t0) / w;
            self.lambda - s * w * (0.5 - x + x * x * x - 0.5 * x * x * x * x)
        } else {
            self.lambda - 0.5 * s * w + s * (tau - t0)
        }
    }

    pub fn lower_slope(&self, tau: f64) -> f64 {
        if self.flat_lower || tau >= self.corner {
            return 0.0;
        }
        let t0 = self.corner - self.smoothing;
        let s = self.lambda / self.ramp;
        if tau >= t0 {
            s * (1.0 - smoothstep((tau - t0) / self.smoothing))
        } else {
            s
        }
    }

    pub fn lower_curvature(&self, tau: f64) -> f64 {
        let t0 = self.corner - self.smoothing;
        if self.flat_lower || tau >= self.corner || tau < t0 {
            return 0.0;
        }
        let x = (tau - t0) / self.smoothing;
        -self.lambda / self.ramp * 6.0 * x * (1.0 - x) / self.smoothing
    }
}

/// `g⁺ ≡ λ`; `g⁻` a ramp ending at `m + δ`, its corner smoothed to C²,
/// steepened by halving until it lies under `max_{x′} g`.
pub fn build_envelopes(problem: &CylinderProblem) -> Result<EnvelopePair, LiouvilleError> {
    let (lo, hi) = axial_range(&problem.ibvp.domain);
    let corner = problem.m + problem.delta;
    let taus: Vec<f64> = (0..AXIAL_SAMPLES)
        .map(|i| lo + (hi - lo) * i as f64 / (AXIAL_SAMPLES - 1) as f64)
        .filter(|t| *t <= corner)
        .collect();
    let data: Vec<(f64, f64)> = taus.iter().filter_map(|&t| problem.max_over_section(t).map(|v| (t, v))).collect();
    let mut pair = EnvelopePair {
        lambda: problem.lambda,
        corner,
        delta: problem.delta,
        ramp: problem.delta,
        smoothing: problem.delta / 4.0,
        flat_lower: false,
    };
    if data.iter().all(|&(_, v)| v >= problem.lambda) {
        pair.flat_lower = true;
        return Ok(pair);
    }
    let mut worst = f64::NAN;
    for _ in 0..MAX_HALVINGS {
        match data.iter().find(|&&(t, v)| pair.lower(t) > v) {
            None => return Ok(pair),
            Some(&(t, _)) => worst = t,
        }
        pair.ramp *= 0.5;
    }
    Err(LiouvilleError::EnvelopeDomination { tau: worst })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LiouvilleReport {
    pub t: Vec<f64>,
    /// `sup_{τ ≥ m+δ} |u − λ|`.
    pub flatness: Vec<f64>,
    /// `max (g⁻(τ) − u)+`.
    pub lower_violation: Vec<f64>,
    /// `max (u − g⁺(τ + νt))+`.
    pub upper_violation: Vec<f64>,
    /// Largest drop of u between axially adjacent unknowns.
    pub monotone_violation: Vec<f64>,
}

impl LiouvilleReport {
    pub fn sup_flatness(&self) -> f64 {
        self.flatness.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_lower_violation(&self) -> f64 {
        self.lower_violation.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_upper_violation(&self) -> f64 {
        self.upper_violation.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_monotone_violation(&self) -> f64 {
        self.monotone_violation.iter().copied().fold(0.0, f64::max)
    }
}

/// `ε |ν| T + 10 h Lip(g)`.
pub fn flatness_tolerance(params: &FlowParams, horizon: f64, spacing: f64, lipschitz: f64) -> f64 {
    params.epsilon * params.nu.abs() * horizon + 10.0 * spacing * lipschitz
}

fn measure(problem: &CylinderProblem, env: &EnvelopePair, grid: &Grid, nu: f64, s: &FieldState, out: &mut LiouvilleReport) {
    let ax = problem.axis();
    let plateau = problem.m + problem.delta;
    let (mut f, mut lo, mut up, mut mono) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &n in grid.unknowns() {
        let x = grid.position(n);
        let u = s.values[n];
        if x[ax] >= plateau {
            f = f.max((u - problem.lambda).abs());
        }
        lo = lo.max(env.lower(x[ax]) - u);
        up = up.max(u - env.upper(x[ax] + nu * s.t));
        if let Some(next) = grid.neighbor(n, ax, 1) {
            if grid.slot(next).is_some() {
                mono = mono.max(u - s.values[next]);
            }
        }
    }
    out.t.push(s.t);
    out.flatness.push(f);
    out.lower_violation.push(lo);
    out.upper_violation.push(up);
    out.monotone_violation.push(mono);
}

/// Evolves the problem and records flatness, sandwich and monotonicity per step.
pub fn flatness_and_sandwich(
    problem: &CylinderProblem,
    grid: &Grid,
    params: &FlowParams,
    horizon: f64,
) -> Result<LiouvilleReport, LiouvilleError> {
    if params.nu < 0.0 {
        return Err(LiouvilleError::NegativeSpeed(params.nu));
    }
    let env = build_envelopes(problem)?;
    let mut out = LiouvilleReport::default();
    flow::solve_ibvp_observed(&problem.ibvp, grid, params, &RunOptions::new(horizon), |_, s| {
        measure(problem, &env, grid, params.nu, s, &mut out)
    })?;
    Ok(out)
}

/// Grid samples of `u⁺ = g⁺(τ + νt)` and `u⁻ = g⁻(τ)` at the given times.
pub fn envelope_fields(env: &EnvelopePair, grid: &Grid, nu: f64, times: &[f64]) -> (Vec<FieldState>, Vec<FieldState>) {
    let ax = grid.dim() - 1;
    let sample = |f: &dyn Fn(f64) -> f64, t: f64| FieldState {
        values: (0..grid.node_count()).map(|n| f(grid.position(n)[ax])).collect(),
        t,
    };
    let upper = times.iter().map(|&t| sample(&|tau| env.upper(tau + nu * t), t)).collect();
    let lower = times.iter().map(|&t| sample(&|tau| env.lower(tau), t)).collect();
    (upper, lower)
}

/// Super-solution check of `u⁺` and sub-solution check of `u⁻`.
pub fn envelope_viscosity_checks(
    env: &EnvelopePair,
    grid: &Grid,
    params: &FlowParams,
    times: &[f64],
) -> Result<(Vec<Violation>, Vec<Violation>), LiouvilleError> {
    let (upper, lower) = envelope_fields(env, grid, params.nu, times);
    let opts = ProbeOptions::default();
    Ok((
        verify::viscosity_spot_check(&upper, grid, params, Mode::Super, &opts)?,
        verify::viscosity_spot_check(&lower, grid, params, Mode::Sub, &opts)?,
    ))
}
