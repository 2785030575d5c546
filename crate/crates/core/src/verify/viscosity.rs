//! Discrete sub/super-solution tests for the degenerate flow
//! `u_t = (δ − p̂⊗p̂):D²u + ν|∇u|`, by touching sampled grid data with
//! fitted quadratics.

use nalgebra::DMatrix;

use super::VerifyError;
use crate::geometry::{Grid, Point};
use crate::operator::{FieldState, FlowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sub,
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    Regular,
    /// `|p|` under the floor; `eta` is the optimal direction for the check.
    Degenerate { eta: [f64; 3] },
}

/// Quadratic test function touching the data at `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityProbe {
    pub node: usize,
    pub x: Point,
    pub t: f64,
    pub p: [f64; 3],
    pub m: [[f64; 3]; 3],
    pub q: f64,
    pub radius: usize,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub node: usize,
    pub x: Point,
    pub t: f64,
    /// Amount by which the inequality fails, beyond the tolerance.
    pub margin: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    /// Touch radius in grid units.
    pub radius: usize,
    /// Largest number of space-time points to probe; evenly strided.
    pub budget: Option<usize>,
    /// Defaults to `10 h`.
    pub tolerance: Option<f64>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { radius: 2, budget: None, tolerance: None }
    }
}

fn eigen(m: &[[f64; 3]; 3], dim: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mat = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let e = mat.symmetric_eigen();
    (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
}

fn trace(m: &[[f64; 3]; 3], dim: usize) -> f64 {
    (0..dim).map(|i| m[i][i]).sum()
}

/// `sup_{|η|≤1} (δ − η⊗η):M = tr M − min(λ_min, 0)`, with the maximizing η.
pub fn degenerate_sup(m: &[[f64; 3]; 3], dim: usize) -> (f64, [f64; 3]) {
    let (vals, vecs) = eigen(m, dim);
    let (k, lmin) = vals.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    let mut eta = [0.0; 3];
    if lmin < 0.0 {
        for i in 0..dim {
            eta[i] = vecs[(i, k)];
        }
    }
    (trace(m, dim) - lmin.min(0.0), eta)
}

/// `inf_{|η|≤1} (δ − η⊗η):M = tr M − max(λ_max, 0)`, with the minimizing η.
pub fn degenerate_inf(m: &[[f64; 3]; 3], dim: usize) -> (f64, [f64; 3]) {
    let (vals, vecs) = eigen(m, dim);
    let (k, lmax) = vals.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    let mut eta = [0.0; 3];
    if lmax > 0.0 {
        for i in 0..dim {
            eta[i] = vecs[(i, k)];
        }
    }
    (trace(m, dim) - lmax.max(0.0), eta)
}

fn check_snapshots(snapshots: &[FieldState], grid: &Grid) -> Result<(), VerifyError> {
    if snapshots.len() < 3 {
        return Err(VerifyError::TooFewSnapshots(snapshots.len()));
    }
    for (i, w) in snapshots.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(VerifyError::NonIncreasingTimes(i + 1));
        }
    }
    if let Some(s) = snapshots.iter().find(|s| s.values.len() != grid.node_count()) {
        return Err(VerifyError::SnapshotSize { got: s.values.len(), expected: grid.node_count() });
    }
    Ok(())
}

/// Nodes whose whole touch box consists of free unknowns.
fn probe_nodes(grid: &Grid, radius: usize) -> Vec<usize> {
    let dim = grid.dim();
    let counts = grid.counts();
    let r = radius as i64;
    grid.unknowns()
        .iter()
        .copied()
        .filter(|&n| {
            let ijk = grid.multi_index(n);
            box_offsets(dim, r).all(|o| {
                let mut m = [0usize; 3];
                for a in 0..3 {
                    let v = ijk[a] as i64 + o[a];
                    if v < 0 || v >= counts[a] as i64 {
                        return false;
                    }
                    m[a] = v as usize;
                }
                grid.slot(grid.index(m)).is_some_and(|s| grid.pin(s).is_none())
            })
        })
        .collect()
}

fn box_offsets(dim: usize, r: i64) -> impl Iterator<Item = [i64; 3]> {
    let rz = if dim == 3 { r } else { 0 };
    (-r..=r).flat_map(move |i| (-r..=r).flat_map(move |j| (-rz..=rz).map(move |k| [i, j, k])))
}

fn shifted(grid: &Grid, node: usize, o: [i64; 3]) -> usize {
    let ijk = grid.multi_index(node);
    grid.index([
        (ijk[0] as i64 + o[0]) as usize,
        (ijk[1] as i64 + o[1]) as usize,
        (ijk[2] as i64 + o[2]) as usize,
    ])
}

/// Fits `p`, `M`, `q`, and the time curvature at `(node, snapshot j)`.
fn fit(grid: &Grid, snaps: &[FieldState], j: usize, node: usize) -> ([f64; 3], [[f64; 3]; 3], f64, f64) {
    let dim = grid.dim();
    let h = grid.spacing();
    let u = &snaps[j].values;
    let at = |o: [i64; 3]| u[shifted(grid, node, o)];
    let mut p = [0.0; 3];
    let mut m = [[0.0; 3]; 3];
    let u0 = u[node];
    for a in 0..dim {
        let mut e = [0i64; 3];
        e[a] = 1;
        let up = at(e);
        let um = at([-e[0], -e[1], -e[2]]);
        p[a] = (up - um) / (2.0 * h);
        m[a][a] = (up - 2.0 * u0 + um) / (h * h);
        for b in (a + 1)..dim {
            let mut f = [0i64; 3];
            f[b] = 1;
            let s = |sa: i64, sb: i64| at([sa * e[0] + sb * f[0], sa * e[1] + sb * f[1], sa * e[2] + sb * f[2]]);
            let v = (s(1, 1) - s(1, -1) - s(-1, 1) + s(-1, -1)) / (4.0 * h * h);
            m[a][b] = v;
            m[b][a] = v;
        }
    }
    let (tm, t0, tp) = (snaps[j - 1].t, snaps[j].t, snaps[j + 1].t);
    let (dm, dp) = (t0 - tm, tp - t0);
    let (um, up) = (snaps[j - 1].values[node], snaps[j + 1].values[node]);
    let q = -dp / (dm * (dm + dp)) * um + (dp - dm) / (dm * dp) * u0 + dm / (dp * (dm + dp)) * up;
    let ctt = 2.0 * ((up - u0) / dp - (u0 - um) / dm) / (dm + dp);
    (p, m, q, ctt)
}

/// Does `u − φ` have a strict local max (sub) or min (super) at the center
/// of the space-time box?
fn touches(
    grid: &Grid,
    snaps: &[FieldState],
    j: usize,
    node: usize,
    radius: usize,
    phi: &dyn Fn(&[f64; 3], f64) -> f64,
    mode: Mode,
) -> bool {
    let h = grid.spacing();
    let t0 = snaps[j].t;
    let center = snaps[j].values[node];
    let lo = j.saturating_sub(radius).max(0);
    let hi = (j + radius).min(snaps.len() - 1);
    for (jj, snap) in snaps.iter().enumerate().take(hi + 1).skip(lo) {
        for o in box_offsets(grid.dim(), radius as i64) {
            if jj == j && o == [0, 0, 0] {
                continue;
            }
            let dx = [o[0] as f64 * h, o[1] as f64 * h, o[2] as f64 * h];
            let diff = snap.values[shifted(grid, node, o)] - center - phi(&dx, snap.t - t0);
            let strict = match mode {
                Mode::Sub => diff < 0.0,
                Mode::Super => diff > 0.0,
            };
            if !strict {
                return false;
            }
        }
    }
    true
}

/// Probes interior space-time points of a trajectory. Each point gets a
/// quadratic fitted from central differences, bent by `±h` in space and time
/// so a smooth field is touched strictly; where it touches, the sub- or
/// super-solution inequality is tested with tolerance `10 h`. Violations are
/// sorted by location.
pub fn viscosity_spot_check(
    snapshots: &[FieldState],
    grid: &Grid,
    params: &FlowParams,
    mode: Mode,
    opts: &ProbeOptions,
) -> Result<Vec<Violation>, VerifyError> {
    Ok(probe(snapshots, grid, params, mode, opts)?.1)
}

/// Like [`viscosity_spot_check`], also returning the probes that touched.
pub fn probe(
    snapshots: &[FieldState],
    grid: &Grid,
    params: &FlowParams,
    mode: Mode,
    opts: &ProbeOptions,
) -> Result<(Vec<ViscosityProbe>, Vec<Violation>), VerifyError> {
    check_snapshots(snapshots, grid)?;
    let dim = grid.dim();
    let h = grid.spacing();
    let tol = opts.tolerance.unwrap_or(10.0 * h);
    let floor = (10.0 * h * h).max(params.epsilon * params.epsilon);
    let bend = h;
    let nodes = probe_nodes(grid, opts.radius);
    let mut points: Vec<(usize, usize)> =
        (1..snapshots.len() - 1).flat_map(|j| nodes.iter().map(move |&n| (j, n))).collect();
    if let Some(b) = opts.budget {
        if b < points.len() && b > 0 {
            let stride = points.len() as f64 / b as f64;
            points = (0..b).map(|i| points[(i as f64 * stride) as usize]).collect();
        }
    }
    let sign = match mode {
        Mode::Sub => 1.0,
        Mode::Super => -1.0,
    };
    let mut probes = Vec::new();
    let mut violations = Vec::new();
    for (j, node) in points {
        let (p, mut m, q, ctt) = fit(grid, snapshots, j, node);
        for (a, row) in m.iter_mut().enumerate().take(dim) {
            row[a] += sign * bend;
        }
        let mt = m;
        let ptt = ctt + sign * bend;
        let phi = move |dx: &[f64; 3], dt: f64| {
            let mut v = q * dt + 0.5 * ptt * dt * dt;
            for a in 0..dim {
                v += p[a] * dx[a];
                for b in 0..dim {
                    v += 0.5 * mt[a][b] * dx[a] * dx[b];
                }
            }
            v
        };
        if !touches(grid, snapshots, j, node, opts.radius, &phi, mode) {
            continue;
        }
        let pn = crate::geometry::norm(&p);
        let (rhs, branch) = if pn > floor {
            let mut pmp = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    pmp += p[a] * m[a][b] * p[b];
                }
            }
            (trace(&m, dim) - pmp / (pn * pn) + params.nu * pn, Branch::Regular)
        } else {
            let (v, eta) = match mode {
                Mode::Sub => degenerate_sup(&m, dim),
                Mode::Super => degenerate_inf(&m, dim),
            };
            (v, Branch::Degenerate { eta })
        };
        let excess = match mode {
            Mode::Sub => q - rhs,
            Mode::Super => rhs - q,
        };
        let x = grid.position(node);
        let t = snapshots[j].t;
        if excess > tol {
            violations.push(Violation { node, x, t, margin: excess - tol, branch });
        }
        probes.push(ViscosityProbe { node, x, t, p, m, q, radius: opts.radius, branch });
    }
    violations.sort_by(|a, b| {
        a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal).then(a.t.total_cmp(&b.t))
    });
    Ok((probes, violations))
}
