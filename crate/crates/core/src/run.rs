//! Experiment dispatch, property verdicts and run summaries.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::barriers::{self, Side};
use crate::config::{Experiment, RunConfig};
use crate::data::ScalarFn;
use crate::flow::{self, FlowReport, Ibvp, RunOptions};
use crate::geometry::{Grid, Point};
use crate::io::{self, Dump};
use crate::liouville::{self, CylinderProblem};
use crate::operator::FieldState;
use crate::verify::{self, Mode, ProbeOptions, Violation};

#[derive(Debug, Error)]
#[error("{experiment}: {message}")]
pub struct RunError {
    pub experiment: &'static str,
    pub message: String,
}

impl RunError {
    fn new(experiment: Experiment, e: impl std::fmt::Display) -> Self {
        Self { experiment: experiment.name(), message: e.to_string() }
    }
}

/// A checked estimate: what was measured, against what, and which result of
/// the theory it reflects.
#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub anchor: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Property {
    pub fn at_most(name: &str, anchor: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), anchor: anchor.into(), measured, tolerance, pass: measured <= tolerance }
    }

    pub fn at_least(name: &str, anchor: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.into(), anchor: anchor.into(), measured, tolerance, pass: measured >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub properties: Vec<Property>,
    pub scalars: Vec<(String, f64)>,
    pub notes: Vec<(String, String)>,
    /// Output files, relative to the output directory.
    pub files: Vec<String>,
}

impl RunSummary {
    fn new(experiment: Experiment) -> Self {
        Self { experiment, properties: Vec::new(), scalars: Vec::new(), notes: Vec::new(), files: Vec::new() }
    }

    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }

    fn scalar(&mut self, k: &str, v: f64) {
        self.scalars.push((k.into(), v));
    }

    fn note(&mut self, k: &str, v: impl Into<String>) {
        self.notes.push((k.into(), v.into()));
    }

    fn file(&mut self, out: &Path, p: &Path) {
        let rel = p.strip_prefix(out).unwrap_or(p);
        self.files.push(rel.display().to_string());
    }

    /// `key: value` lines; no timings, so identical runs give identical text.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.experiment.name());
        let _ = writeln!(s, "status: {}", if self.all_pass() { "pass" } else { "fail" });
        for p in &self.properties {
            let _ = writeln!(
                s,
                "property.{}: {} measured={} tolerance={} anchor={}",
                p.name,
                if p.pass { "pass" } else { "fail" },
                p.measured,
                p.tolerance,
                p.anchor
            );
        }
        for (k, v) in &self.scalars {
            let _ = writeln!(s, "scalar.{k}: {v}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "note.{k}: {v}");
        }
        for f in &self.files {
            let _ = writeln!(s, "file: {f}");
        }
        s
    }
}

/// Runs the configured experiment, writing outputs under `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunSummary, RunError> {
    let x = cfg.experiment;
    io::ensure_dir(out).map_err(|e| RunError::new(x, e))?;
    let grid = Grid::build(&cfg.domain, cfg.spacing).map_err(|e| RunError::new(x, e))?;
    let mut summary = RunSummary::new(cfg.experiment);
    if grid.is_coarse() {
        summary.note("grid", "spacing is coarse relative to the smallest domain feature");
    }
    match cfg.experiment {
        Experiment::Flow => run_flow(cfg, &grid, out, &mut summary),
        Experiment::Steady => run_steady(cfg, &grid, out, &mut summary),
        Experiment::Continuation => run_continuation(cfg, &grid, out, &mut summary),
        Experiment::Barrier => run_barrier(cfg, &grid, &mut summary),
        Experiment::Comparison => run_comparison(cfg, &grid, out, &mut summary),
        Experiment::Viscosity => run_viscosity(cfg, &grid, out, &mut summary),
        Experiment::Liouville => run_liouville(cfg, &grid, out, &mut summary),
    }
    .map_err(|e| RunError::new(x, e))?;
    let path = out.join("summary.txt");
    summary.file(out, &path);
    io::write_text(&path, &summary.render()).map_err(|e| RunError::new(x, e))?;
    Ok(summary)
}

type Res = Result<(), Box<dyn std::error::Error + Send + Sync>>;

fn data_range(grid: &Grid, p: &Ibvp) -> Result<(f64, f64), crate::geometry::GeometryError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut take = |v: f64| {
        lo = lo.min(v);
        hi = hi.max(v);
    };
    for &n in grid.unknowns() {
        take(p.g.eval(&grid.position(n)));
    }
    for x in grid.boundary_points().iter().chain(&p.domain.boundary_samples(flow::COMPATIBILITY_SAMPLES)?) {
        take(p.h.eval(x));
    }
    Ok((lo, hi))
}

fn run_opts(cfg: &RunConfig, snapshots: &[f64]) -> RunOptions {
    let mut o = RunOptions::new(cfg.horizon).with_snapshots(snapshots);
    o.step_budget = cfg.max_steps;
    o
}

fn write_flow_outputs(grid: &Grid, report: &FlowReport, out: &Path, summary: &mut RunSummary) -> Res {
    let trace = verify::energy_series(report);
    let p = out.join("series.csv");
    io::write_series(&p, report, &trace)?;
    summary.file(out, &p);
    for f in io::write_snapshots(out, grid, report)? {
        summary.file(out, &f);
    }
    Ok(())
}

fn run_flow(cfg: &RunConfig, grid: &Grid, out: &Path, summary: &mut RunSummary) -> Res {
    let problem = cfg.ibvp()?;
    let params = &cfg.params;
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let report = flow::solve_ibvp_observed(&problem, grid, params, &run_opts(cfg, &cfg.snapshots), |_, s| {
        for &n in grid.unknowns() {
            umin = umin.min(s.values[n]);
            umax = umax.max(s.values[n]);
        }
    })?;
    if report.dt_warning {
        summary.note("dt", "time step exceeds the explicit stability limit");
    }
    let s = &report.series;
    let h = grid.spacing();
    let sup = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    if params.nu == 0.0 {
        let (lo, hi) = data_range(grid, &problem)?;
        let excess = (umax - hi).max(lo - umin).max(0.0);
        summary.properties.push(Property::at_most("max_principle", "maximum-norm estimate", excess, 1e-8));
    } else {
        match barriers::sup_norm_bound(&problem, grid, params, cfg.tol, cfg.max_steps) {
            Ok(b) if b.available() => {
                summary.scalar("sup_norm_bound", b.bound);
                summary.properties.push(Property::at_most("sup_norm", "maximum-norm estimate", sup(&s.sup_u), b.bound));
            }
            Ok(_) => summary.note("sup_norm", "steady comparison field did not converge; bound unavailable"),
            Err(err) => summary.note("sup_norm", err.to_string()),
        }
    }
    let gc = verify::gradient_interior_max_check(&report);
    summary.properties.push(Property::at_most(
        "gradient_interior_max",
        "gradient estimate",
        gc.interior_max - gc.boundary_max,
        gc.tolerance,
    ));
    let b0 = verify::ut_initial_slice_bound(&problem, grid, params);
    summary.scalar("ut_initial_bound", b0);
    summary.properties.push(Property::at_most("ut_bound", "time-derivative estimate", sup(&s.sup_ut), b0 + 10.0 * h));
    let budget = verify::dissipation_budget(&report, grid.measure(), 1e-12);
    summary.properties.push(Property::at_most("dissipation", "dissipation estimate", budget.total, budget.bound + 1e-12));
    let trace = verify::energy_series(&report);
    if params.nu == 0.0 {
        summary.properties.push(Property::at_most("energy_descent", "energy identity", trace.max_increase(), 1e-8));
    }
    summary.properties.push(Property::at_most(
        "series_finite",
        "well-posedness of the regularized problem",
        if s.all_finite() && s.lengths_agree() { 0.0 } else { 1.0 },
        0.0,
    ));
    summary.scalar("steps", report.steps as f64);
    summary.scalar("dt", report.dt);
    summary.scalar("sup_u", sup(&s.sup_u));
    summary.scalar("sup_grad", sup(&s.sup_grad));
    summary.scalar("sup_ut", sup(&s.sup_ut));
    summary.scalar("energy_initial", s.energy.first().copied().unwrap_or(0.0));
    summary.scalar("energy_final", s.energy.last().copied().unwrap_or(0.0));
    summary.scalar("energy_residual_max", trace.max_abs_residual());
    summary.scalar("dissipation_total", budget.total);
    write_flow_outputs(grid, &report, out, summary)
}

fn nearest_unknown(grid: &Grid, x: &Point) -> Option<usize> {
    grid.unknowns().iter().copied().min_by(|&a, &b| {
        let d = |n: usize| {
            let p = grid.position(n);
            (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2)
        };
        d(a).total_cmp(&d(b))
    })
}

fn stationary(state: &FieldState) -> Vec<FieldState> {
    (0..3).map(|k| FieldState { values: state.values.clone(), t: k as f64 }).collect()
}

fn violation_rows(mode: f64, v: &[Violation]) -> Vec<Vec<f64>> {
    v.iter().map(|x| vec![mode, x.x[0], x.x[1], x.x[2], x.t, x.margin]).collect()
}

fn push_viscosity(
    summary: &mut RunSummary,
    label: &str,
    sub: &[Violation],
    sup: &[Violation],
    out: &Path,
) -> Res {
    summary.properties.push(Property::at_most(
        &format!("{label}_subsolution"),
        "viscosity sub-solution definition",
        sub.len() as f64,
        0.0,
    ));
    summary.properties.push(Property::at_most(
        &format!("{label}_supersolution"),
        "viscosity super-solution definition",
        sup.len() as f64,
        0.0,
    ));
    let mut rows = violation_rows(0.0, sub);
    rows.extend(violation_rows(1.0, sup));
    let p = out.join(format!("{label}_violations.csv"));
    io::write_csv(&p, &["mode", "x1", "x2", "x3", "t", "margin"], &rows)?;
    summary.file(out, &p);
    Ok(())
}

fn run_steady(cfg: &RunConfig, grid: &Grid, out: &Path, summary: &mut RunSummary) -> Res {
    let problem = cfg.ibvp()?;
    let r = flow::relax_to_steady(&problem, grid, &cfg.params, cfg.tol, cfg.max_steps)?;
    summary.properties.push(Property::at_most("steady_residual", "steady limit", r.residual, cfg.tol));
    if !r.converged {
        summary.note("steady", "step budget exhausted before convergence");
    }
    let snaps = stationary(&r.state);
    let opts = ProbeOptions::default();
    let sub = verify::viscosity_spot_check(&snaps, grid, &cfg.params, Mode::Sub, &opts)?;
    let sup = verify::viscosity_spot_check(&snaps, grid, &cfg.params, Mode::Super, &opts)?;
    push_viscosity(summary, "steady", &sub, &sup, out)?;
    summary.scalar("steps", r.steps as f64);
    summary.scalar("residual", r.residual);
    if let Some(c) = nearest_unknown(grid, &cfg.domain.center()) {
        summary.scalar("center_value", r.state.values[c]);
    }
    let p = out.join("steady.bin");
    io::write_dump(&p, &Dump::from_state(grid, &r.state))?;
    summary.file(out, &p);
    Ok(())
}

fn run_continuation(cfg: &RunConfig, grid: &Grid, out: &Path, summary: &mut RunSummary) -> Res {
    let problem = cfg.ibvp()?;
    let table = flow::epsilon_continuation(&problem, grid, &cfg.eps_list, &cfg.params, cfg.horizon)?;
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| vec![r.eps_coarse, r.eps_fine, r.sup_diff]).collect();
    let p = out.join("continuation.csv");
    io::write_csv(&p, &["eps_coarse", "eps_fine", "sup_diff"], &rows)?;
    summary.file(out, &p);
    if let Some((eps, msg)) = &table.failure {
        summary.note("failure", format!("run at epsilon {eps} failed: {msg}"));
    }
    let worst_ratio = table
        .rows
        .windows(2)
        .map(|w| if w[0].sup_diff > 0.0 { w[1].sup_diff / w[0].sup_diff } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let complete = table.failure.is_none() && table.rows.len() + 1 == cfg.eps_list.len();
    summary.properties.push(Property {
        name: "differences_decrease".into(),
        anchor: "vanishing-regularization limit".into(),
        measured: worst_ratio,
        tolerance: 1.0,
        pass: complete && worst_ratio < 1.0,
    });
    for (i, r) in table.rows.iter().enumerate() {
        summary.scalar(&format!("sup_diff_{i}"), r.sup_diff);
    }
    summary.note("monotone", if table.monotone { "yes" } else { "no" });
    Ok(())
}

/// max |∇h| over the unknowns, by central differences of the expression.
fn data_gradient_sup(grid: &Grid, f: &ScalarFn) -> f64 {
    let k = 1e-6;
    grid.unknowns()
        .iter()
        .map(|&n| {
            let x = grid.position(n);
            let mut g2 = 0.0;
            for a in 0..grid.dim() {
                let (mut xp, mut xm) = (x, x);
                xp[a] += k;
                xm[a] -= k;
                g2 += ((f.eval(&xp) - f.eval(&xm)) / (2.0 * k)).powi(2);
            }
            g2.sqrt()
        })
        .fold(0.0, f64::max)
}

fn run_barrier(cfg: &RunConfig, grid: &Grid, summary: &mut RunSummary) -> Res {
    let problem = cfg.ibvp()?;
    let params = &cfg.params;
    let sup_bound = if params.nu != 0.0 {
        let b = barriers::sup_norm_bound(&problem, grid, params, cfg.tol, cfg.max_steps)?;
        if !b.available() {
            summary.note("sup_norm", "steady comparison field did not converge; using the data bound");
        }
        b.available().then_some(b.bound)
    } else {
        None
    };
    let upper = barriers::build_upper_barrier(&problem, grid, params, sup_bound)?;
    let lower = barriers::build_lower_barrier(&problem, grid, params, sup_bound)?;
    if upper.exceeds_standing_bound {
        summary.note("nu", "|nu| exceeds n H0 / (n+1); barrier built under |nu| < n H0");
    }
    let h = grid.spacing();
    for (b, tag) in [(&upper, "upper"), (&lower, "lower")] {
        let res = barriers::barrier_supersolution_residual(b, grid, &problem.h, params);
        summary.properties.push(Property::at_least(&format!("{tag}_residual"), "barrier construction", res, 0.0));
        let margin = barriers::parabolic_boundary_margin(b, grid, &problem);
        summary.properties.push(Property::at_least(&format!("{tag}_dominates_data"), "barrier construction", margin, 0.0));
        summary.scalar(&format!("{tag}_lambda"), b.lambda);
        summary.scalar(&format!("{tag}_beta"), b.beta);
    }
    summary.scalar("rho", upper.rho);
    let (mut vu, mut vl) = (0.0f64, 0.0f64);
    let report = flow::solve_ibvp_observed(&problem, grid, params, &run_opts(cfg, &[]), |_, s| {
        vu = vu.max(upper.violation(grid, &problem.h, s));
        vl = vl.max(lower.violation(grid, &problem.h, s));
    })?;
    debug_assert_eq!(upper.side, Side::Upper);
    summary.properties.push(Property::at_most("collar_upper", "boundary gradient estimate", vu, 10.0 * h));
    summary.properties.push(Property::at_most("collar_lower", "boundary gradient estimate", vl, 10.0 * h));
    let ring = report.series.sup_grad_ring.iter().copied().fold(0.0, f64::max);
    let allowance = upper.gradient_norm() + lower.gradient_norm() + data_gradient_sup(grid, &problem.h) + 10.0 * h;
    summary.properties.push(Property::at_most("ring_gradient", "boundary gradient estimate", ring, allowance));
    Ok(())
}

fn run_comparison(cfg: &RunConfig, grid: &Grid, out: &Path, summary: &mut RunSummary) -> Res {
    let results: Vec<Result<f64, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.pairs as u64)
            .map(|i| {
                s.spawn(move || {
                    let (lo, hi) = barriers::ordered_pair(&cfg.domain, cfg.seed, i).map_err(|e| e.to_string())?;
                    barriers::comparison_experiment(&lo, &hi, grid, &cfg.params, cfg.horizon)
                        .map(|r| r.max_violation)
                        .map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("worker panicked".into()))).collect()
    });
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (i, r) in results.into_iter().enumerate() {
        let v = r?;
        worst = worst.max(v);
        rows.push(vec![i as f64, v]);
    }
    let p = out.join("comparison.csv");
    io::write_csv(&p, &["pair", "max_violation"], &rows)?;
    summary.file(out, &p);
    summary.properties.push(Property::at_most("ordering", "comparison principle", worst, 1e-10));
    summary.scalar("pairs", cfg.pairs as f64);
    Ok(())
}

fn run_viscosity(cfg: &RunConfig, grid: &Grid, out: &Path, summary: &mut RunSummary) -> Res {
    let problem = cfg.ibvp()?;
    let times: Vec<f64> = if cfg.snapshots.len() >= 3 {
        cfg.snapshots.clone()
    } else {
        (0..5).map(|k| cfg.horizon * k as f64 / 4.0).collect()
    };
    let report = flow::solve_ibvp(&problem, grid, &cfg.params, &run_opts(cfg, &times))?;
    let opts = ProbeOptions::default();
    let sub = verify::viscosity_spot_check(&report.snapshots, grid, &cfg.params, Mode::Sub, &opts)?;
    let sup = verify::viscosity_spot_check(&report.snapshots, grid, &cfg.params, Mode::Super, &opts)?;
    push_viscosity(summary, "flow", &sub, &sup, out)?;
    write_flow_outputs(grid, &report, out, summary)
}

/// max over unknowns and axes of |f(x + h e) − f(x)| / h, as a vector norm.
fn grid_lipschitz(grid: &Grid, f: &ScalarFn) -> f64 {
    let h = grid.spacing();
    grid.unknowns()
        .iter()
        .map(|&n| {
            let x = grid.position(n);
            let mut g2 = 0.0;
            for a in 0..grid.dim() {
                if let Some(m) = grid.neighbor(n, a, 1).filter(|&m| grid.slot(m).is_some()) {
                    g2 += ((f.eval(&grid.position(m)) - f.eval(&x)) / h).powi(2);
                }
            }
            g2.sqrt()
        })
        .fold(0.0, f64::max)
}

fn run_liouville(cfg: &RunConfig, grid: &Grid, out: &Path, summary: &mut RunSummary) -> Res {
    let settings = cfg.liouville.as_ref().ok_or("missing liouville settings")?;
    let h = grid.spacing();
    let delta = settings.delta.unwrap_or(4.0 * h);
    let g = ScalarFn::from(cfg.g.clone());
    let problem = CylinderProblem::new(cfg.domain.clone(), g.clone(), settings.m, settings.lambda, delta)?;
    let params = &cfg.params;
    let r = liouville::flatness_and_sandwich(&problem, grid, params, cfg.horizon)?;
    let lip = grid_lipschitz(grid, &g);
    let drift = params.epsilon * params.nu.abs() * cfg.horizon;
    let tol = liouville::flatness_tolerance(params, cfg.horizon, h, lip);
    summary.properties.push(Property::at_most("flatness", "flatness property", r.sup_flatness(), tol));
    summary.properties.push(Property::at_most(
        "upper_sandwich",
        "envelope sandwich",
        r.max_upper_violation(),
        drift + 1e-8,
    ));
    summary.properties.push(Property::at_most(
        "lower_sandwich",
        "envelope sandwich",
        r.max_lower_violation(),
        10.0 * h * lip,
    ));
    summary.properties.push(Property::at_most(
        "axial_monotonicity",
        "flatness property",
        r.max_monotone_violation(),
        liouville::MONOTONE_TOL + drift,
    ));
    let env = liouville::build_envelopes(&problem)?;
    let times = [0.0, 0.5 * cfg.horizon, cfg.horizon];
    let (sup_v, sub_v) = liouville::envelope_viscosity_checks(&env, grid, params, &times)?;
    summary.properties.push(Property::at_most("upper_envelope_super", "envelope super-solution", sup_v.len() as f64, 0.0));
    summary.properties.push(Property::at_most("lower_envelope_sub", "envelope sub-solution", sub_v.len() as f64, 0.0));
    summary.scalar("delta", delta);
    summary.scalar("lipschitz", lip);
    summary.scalar("lower_ramp", env.ramp);
    summary.scalar("lower_sandwich_strict", r.max_lower_violation());
    let rows: Vec<Vec<f64>> = (0..r.t.len())
        .map(|k| vec![r.t[k], r.flatness[k], r.lower_violation[k], r.upper_violation[k], r.monotone_violation[k]])
        .collect();
    let p = out.join("liouville.csv");
    io::write_csv(&p, &["t", "flatness", "lower", "upper", "monotone"], &rows)?;
    summary.file(out, &p);
    Ok(())
}
