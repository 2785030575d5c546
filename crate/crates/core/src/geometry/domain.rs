//! Analytic convex domains and their signed distance functions.

use std::f64::consts::{FRAC_PI_2, PI};

use super::{GeometryError, Point};

/// Newton projection limits for the ellipse.
const PROJECTION_MAX_ITERS: usize = 64;
const PROJECTION_TOL: f64 = 1e-12;
/// Boundary samples used for the sampled curvature bound.
const CURVATURE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ball {
        radius: f64,
    },
    /// Planar ellipse with semi-axes `a >= b`, `a` along the first axis.
    Ellipse {
        a: f64,
        b: f64,
    },
    /// Rectangle (or capped cylinder in 3D) with rounded edges. The straight
    /// section runs along the last axis over `|x_axial| < straight_half_length`
    /// with cross-section half-width `half_width`.
    Stadium {
        half_width: f64,
        straight_half_length: f64,
        corner_radius: f64,
    },
}

impl Shape {
    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Ball { .. } => "ball",
            Shape::Ellipse { .. } => "ellipse",
            Shape::Stadium { .. } => "stadium",
        }
    }
}

/// A bounded convex domain in R^2 or R^3.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    shape: Shape,
    center: Point,
    dim: usize,
}

impl DomainSpec {
    pub fn new(shape: Shape, center: Point, dim: usize) -> Result<Self, GeometryError> {
        if dim != 2 && dim != 3 {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GeometryError::InvalidShape(format!("{name} must be positive, got {v}")))
            }
        };
        match shape {
            Shape::Ball { radius } => positive("radius", radius)?,
            Shape::Ellipse { a, b } => {
                positive("a", a)?;
                positive("b", b)?;
                if a < b {
                    return Err(GeometryError::InvalidShape(format!("ellipse needs a >= b, got a={a}, b={b}")));
                }
                if dim != 2 {
                    return Err(GeometryError::InvalidShape("ellipse domains are planar".into()));
                }
            }
            Shape::Stadium { half_width, straight_half_length, corner_radius } => {
                positive("half_width", half_width)?;
                positive("straight_half_length", straight_half_length)?;
                positive("corner_radius", corner_radius)?;
                if corner_radius > half_width {
                    return Err(GeometryError::InvalidShape(format!(
                        "corner radius {corner_radius} exceeds half width {half_width}"
                    )));
                }
            }
        }
        if center[..dim].iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidShape("center must be finite".into()));
        }
        let mut center = center;
        for c in center.iter_mut().skip(dim) {
            *c = 0.0;
        }
        Ok(Self { shape, center, dim })
    }

    pub fn ball(radius: f64, dim: usize) -> Result<Self, GeometryError> {
        Self::new(Shape::Ball { radius }, [0.0; 3], dim)
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self, GeometryError> {
        Self::new(Shape::Ellipse { a, b }, [0.0; 3], 2)
    }

    pub fn stadium(
        half_width: f64,
        straight_half_length: f64,
        corner_radius: f64,
        dim: usize,
    ) -> Result<Self, GeometryError> {
        Self::new(Shape::Stadium { half_width, straight_half_length, corner_radius }, [0.0; 3], dim)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn center(&self) -> Point {
        self.center
    }

    /// Ambient dimension n+1.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension n of the boundary hypersurface.
    pub fn boundary_dim(&self) -> usize {
        self.dim - 1
    }

    /// Smallest shape parameter; grid spacing is measured against it.
    pub fn min_feature(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius } => radius,
            Shape::Ellipse { b, .. } => b,
            Shape::Stadium { half_width, straight_half_length, corner_radius } => {
                half_width.min(straight_half_length).min(corner_radius)
            }
        }
    }

    /// Half extents of the axis-aligned bounding box about the center.
    pub fn half_extents(&self) -> Point {
        let mut e = [0.0; 3];
        match self.shape {
            Shape::Ball { radius } => e[..self.dim].fill(radius),
            Shape::Ellipse { a, b } => {
                e[0] = a;
                e[1] = b;
            }
            Shape::Stadium { half_width, straight_half_length, corner_radius } => {
                e[..self.dim - 1].fill(half_width);
                e[self.dim - 1] = straight_half_length + corner_radius;
            }
        }
        e
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius } => 2.0 * radius,
            Shape::Ellipse { a, .. } => 2.0 * a,
            Shape::Stadium { half_width, straight_half_length, corner_radius } => {
                2.0 * ((half_width - corner_radius).hypot(straight_half_length) + corner_radius)
            }
        }
    }

    fn local(&self, x: &Point) -> Point {
        let mut q = [0.0; 3];
        for a in 0..self.dim {
            q[a] = x[a] - self.center[a];
        }
        q
    }

    /// Distance to the boundary, positive inside, negative outside.
    pub fn signed_distance(&self, x: &Point) -> Result<f64, GeometryError> {
        let q = self.local(x);
        match self.shape {
            Shape::Ball { radius } => Ok(radius - norm(&q)),
            Shape::Ellipse { a, b } => ellipse_signed_distance(a, b, q[0], q[1]),
            Shape::Stadium { half_width, straight_half_length, corner_radius } => Ok(stadium_signed_distance(
                &q,
                self.dim,
                half_width,
                straight_half_length,
                corner_radius,
            )),
        }
    }

    /// Sign-exact inside test (strict).
    pub fn contains(&self, x: &Point) -> bool {
        let q = self.local(x);
        match self.shape {
            Shape::Ellipse { a, b } => (q[0] / a).powi(2) + (q[1] / b).powi(2) < 1.0,
            _ => self.signed_distance(x).map(|d| d > 0.0).unwrap_or(false),
        }
    }

    /// Fraction `s` in (0, 1] such that `x + s (y - x)` lies on the boundary.
    /// `x` must be inside and `y` on or outside.
    pub fn segment_crossing(&self, x: &Point, y: &Point) -> Result<f64, GeometryError> {
        let p = self.local(x);
        let mut v = [0.0; 3];
        for a in 0..self.dim {
            v[a] = y[a] - x[a];
        }
        match self.shape {
            Shape::Ball { radius } => Ok(quadratic_exit(dot(&v, &v), 2.0 * dot(&p, &v), dot(&p, &p) - radius * radius)),
            Shape::Ellipse { a, b } => {
                let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
                let qa = v[0] * v[0] * ia + v[1] * v[1] * ib;
                let qb = 2.0 * (p[0] * v[0] * ia + p[1] * v[1] * ib);
                let qc = p[0] * p[0] * ia + p[1] * p[1] * ib - 1.0;
                Ok(quadratic_exit(qa, qb, qc))
            }
            Shape::Stadium { .. } => {
                if self.signed_distance(y)? == 0.0 {
                    return Ok(1.0);
                }
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let z = lerp(x, y, mid);
                    if self.signed_distance(&z)? > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(hi)
            }
        }
    }

    /// Boundary point hit by the ray from the center in direction `u`.
    pub fn boundary_point_along(&self, u: &Point) -> Result<Point, GeometryError> {
        let n = norm(&u[..self.dim]);
        let mut dir = [0.0; 3];
        for a in 0..self.dim {
            dir[a] = u[a] / n;
        }
        let reach = self.diameter();
        let mut far = self.center;
        for a in 0..self.dim {
            far[a] += reach * dir[a];
        }
        let s = self.segment_crossing(&self.center, &far)?;
        Ok(lerp(&self.center, &far, s))
    }

    /// Deterministic boundary samples: uniform angles in 2D, a Fibonacci
    /// lattice of directions in 3D.
    pub fn boundary_samples(&self, count: usize) -> Result<Vec<Point>, GeometryError> {
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let dir = if self.dim == 2 {
                let t = 2.0 * PI * k as f64 / count as f64;
                [t.cos(), t.sin(), 0.0]
            } else {
                let golden = PI * (3.0 - 5.0_f64.sqrt());
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * k as f64;
                [r * phi.cos(), r * phi.sin(), z]
            };
            out.push(self.boundary_point_along(&dir)?);
        }
        Ok(out)
    }

    /// Infimum over the boundary of the mean curvature (average of the
    /// principal curvatures). Closed form for balls and ellipses, sampled for
    /// the stadium.
    pub fn boundary_mean_curvature_bound(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius } => 1.0 / radius,
            Shape::Ellipse { a, b } => b / (a * a),
            Shape::Stadium { .. } => {
                let samples = match self.boundary_samples(CURVATURE_SAMPLES) {
                    Ok(s) => s,
                    Err(_) => return 0.0,
                };
                let step = 1e-4 * self.min_feature();
                let n = self.boundary_dim() as f64;
                samples
                    .iter()
                    .map(|p| -self.laplacian_fd(p, step) / n)
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
            }
        }
    }

    /// Smallest radius of curvature of the boundary; the distance function
    /// is smooth on `{0 < d < reach}`.
    pub fn reach(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius } => radius,
            Shape::Ellipse { a, b } => b * b / a,
            Shape::Stadium { corner_radius, .. } => corner_radius,
        }
    }

    fn laplacian_fd(&self, p: &Point, step: f64) -> f64 {
        let d0 = self.signed_distance(p).unwrap_or(0.0);
        let mut lap = 0.0;
        for a in 0..self.dim {
            let mut xp = *p;
            let mut xm = *p;
            xp[a] += step;
            xm[a] -= step;
            let dp = self.signed_distance(&xp).unwrap_or(d0);
            let dm = self.signed_distance(&xm).unwrap_or(d0);
            lap += (dp + dm - 2.0 * d0) / (step * step);
        }
        lap
    }

    /// Speeds for which the standing assumption `|nu| < n H0 / (n+1)` holds.
    pub fn admissible_nu_interval(&self) -> NuInterval {
        let n = self.boundary_dim() as f64;
        let half = n * self.boundary_mean_curvature_bound() / (n + 1.0);
        NuInterval { lo: -half, hi: half }
    }
}

/// Open interval of admissible speed offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuInterval {
    pub lo: f64,
    pub hi: f64,
}

impl NuInterval {
    pub fn contains(&self, nu: f64) -> bool {
        nu > self.lo && nu < self.hi
    }

    pub fn half_width(&self) -> f64 {
        self.hi
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dot(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lerp(x: &Point, y: &Point, s: f64) -> Point {
    let mut z = [0.0; 3];
    for a in 0..3 {
        z[a] = x[a] + s * (y[a] - x[a]);
    }
    z
}

/// Larger root of `qa s^2 + qb s + qc` clamped into (0, 1]; `qc < 0` at an
/// interior start point.
fn quadratic_exit(qa: f64, qb: f64, qc: f64) -> f64 {
    if qa + qb + qc == 0.0 {
        return 1.0;
    }
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    // Cancellation-free form of (-qb + disc) / (2 qa).
    let s = if qb >= 0.0 { -2.0 * qc / (qb + disc) } else { (-qb + disc) / (2.0 * qa) };
    s.clamp(f64::MIN_POSITIVE, 1.0)
}

fn stadium_signed_distance(q: &Point, dim: usize, half_width: f64, straight: f64, rc: f64) -> f64 {
    let radial = norm(&q[..dim - 1]);
    let axial = q[dim - 1].abs();
    let ex = radial - (half_width - rc);
    let ez = axial - straight;
    let core = if ex > 0.0 || ez > 0.0 { ex.max(0.0).hypot(ez.max(0.0)) } else { ex.max(ez) };
    rc - core
}

fn ellipse_signed_distance(a: f64, b: f64, x: f64, y: f64) -> Result<f64, GeometryError> {
    let (px, py) = (x.abs(), y.abs());
    let dist2 = |t: f64| (a * t.cos() - px).powi(2) + (b * t.sin() - py).powi(2);
    // Half-derivative of dist2 and its derivative.
    let f = |t: f64| {
        let (s, c) = t.sin_cos();
        -(a * a - b * b) * s * c + a * px * s - b * py * c
    };
    let df = |t: f64| {
        let (s, c) = t.sin_cos();
        -(a * a - b * b) * (c * c - s * s) + a * px * c + b * py * s
    };

    const COARSE: usize = 64;
    let ts: Vec<f64> = (0..=COARSE).map(|k| FRAC_PI_2 * k as f64 / COARSE as f64).collect();
    let ds: Vec<f64> = ts.iter().map(|&t| dist2(t)).collect();
    let mut starts = Vec::new();
    for k in 0..=COARSE {
        let left = if k == 0 { f64::INFINITY } else { ds[k - 1] };
        let right = if k == COARSE { f64::INFINITY } else { ds[k + 1] };
        if ds[k] <= left && ds[k] <= right {
            starts.push(ts[k]);
        }
    }

    let mut best = f64::INFINITY;
    let mut last = 0.0;
    for t0 in starts {
        let mut t = t0;
        let mut converged = false;
        for _ in 0..PROJECTION_MAX_ITERS {
            let (fv, dv) = (f(t), df(t));
            if fv == 0.0 {
                converged = true;
                break;
            }
            let mut step = if dv > 0.0 { -fv / dv } else { -fv.signum() * 1e-2 };
            // Damp until the distance does not increase.
            let cur = dist2(t);
            let mut next = (t + step).clamp(0.0, FRAC_PI_2);
            let mut tries = 0;
            while dist2(next) > cur + 1e-300 && tries < 40 {
                step *= 0.5;
                next = (t + step).clamp(0.0, FRAC_PI_2);
                tries += 1;
            }
            let moved = (next - t).abs();
            t = next;
            if moved < PROJECTION_TOL {
                converged = true;
                break;
            }
        }
        last = t;
        if converged {
            best = best.min(dist2(t));
        }
    }
    if !best.is_finite() {
        return Err(GeometryError::ProjectionFailed { point: [x, y, 0.0], last_parameter: last });
    }
    let d = best.sqrt();
    let inside = (x / a).powi(2) + (y / b).powi(2) < 1.0;
    Ok(if inside { d } else { -d })
}
