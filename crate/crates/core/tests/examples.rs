//! Run-level examples and frozen regression anchors.

mod common;

use common::{ball, bump_problem, grid, linear_problem, r2};
use gmcf::barriers;
use gmcf::data::ScalarFn;
use gmcf::flow::{self, Ibvp, RunOptions};
use gmcf::geometry::DomainSpec;
use gmcf::liouville::{self, CylinderProblem};
use gmcf::operator::{FieldState, FlowParams};
use gmcf::verify::{self, Mode, ProbeOptions};

// Values recorded from the first converged runs at h = 1/32, ε = 0.05.
const STEADY_CENTER_NU03: f64 = 0.14980494137578682;
const CONTINUATION_NU03: [f64; 2] = [0.010215055279026108, 0.0036699501860458783];

#[test]
fn five_by_five_box_has_nine_interior_nodes() {
    let g = grid(&ball(), 0.5);
    assert_eq!(g.counts()[..2], [5, 5]);
    let inside = (0..g.node_count()).filter(|&n| r2(&g.position(n)) < 1.0).count();
    assert_eq!(inside, 9);
}

#[test]
fn steady_regression_anchor() {
    let g = grid(&ball(), 1.0 / 32.0);
    let params = FlowParams::new(0.05, 0.3).unwrap();
    let r = flow::relax_to_steady(&bump_problem(), &g, &params, 1e-6, flow::DEFAULT_STEP_BUDGET).unwrap();
    assert!(r.converged && r.residual < 1e-6);
    let center = g.unknowns().iter().copied().find(|&n| r2(&g.position(n)) == 0.0).unwrap();
    assert!((r.state.values[center] - STEADY_CENTER_NU03).abs() < 1e-9, "{}", r.state.values[center]);
}

#[test]
fn stationary_data_is_already_steady() {
    let g = grid(&ball(), 1.0 / 16.0);
    let params = FlowParams::new(0.05, 0.0).unwrap();
    let r = flow::relax_to_steady(&linear_problem(), &g, &params, 1e-6, 1000).unwrap();
    assert!(r.converged);
    assert_eq!(r.steps, 0);
}

#[test]
fn bump_relaxes_to_linear_under_refinement() {
    let params = FlowParams::new(0.05, 0.0).unwrap();
    let gaps: Vec<f64> = [1.0 / 8.0, 1.0 / 16.0]
        .iter()
        .map(|&h| {
            let g = grid(&ball(), h);
            let r = flow::relax_to_steady(&bump_problem(), &g, &params, 1e-6, flow::DEFAULT_STEP_BUDGET).unwrap();
            assert!(r.converged);
            g.unknowns().iter().map(|&n| (r.state.values[n] - g.position(n)[0]).abs()).fold(0.0, f64::max)
        })
        .collect();
    assert!(gaps[1] < gaps[0], "{gaps:?}");
    assert!(gaps[1] < 0.05, "{gaps:?}");
}

#[test]
fn continuation_regression_and_linear_case() {
    let g = grid(&ball(), 1.0 / 32.0);
    let params = FlowParams::new(0.2, 0.3).unwrap();
    let t = flow::epsilon_continuation(&bump_problem(), &g, &[0.2, 0.1, 0.05], &params, 0.5).unwrap();
    assert!(t.monotone);
    for (row, want) in t.rows.iter().zip(CONTINUATION_NU03) {
        assert!((row.sup_diff - want).abs() < 1e-9, "{} vs {want}", row.sup_diff);
    }
    let g = grid(&ball(), 1.0 / 16.0);
    let lin = flow::epsilon_continuation(&linear_problem(), &g, &[0.2, 0.1, 0.05], &params.with_nu(0.0), 0.1).unwrap();
    assert!(lin.rows.iter().all(|r| r.sup_diff <= 1e-10));
}

#[test]
fn sup_norm_bound_examples() {
    let g = grid(&ball(), 1.0 / 16.0);
    let params = FlowParams::new(0.05, 0.3).unwrap();
    let b = barriers::sup_norm_bound(&bump_problem(), &g, &params, 1e-7, flow::DEFAULT_STEP_BUDGET).unwrap();
    assert!(b.available());
    assert!(b.v_max >= 1.0 && b.v_max <= 1.2, "{}", b.v_max);
    let two = Ibvp::new(ball(), ScalarFn::constant(2.0), ScalarFn::constant(2.0)).unwrap();
    let b2 = barriers::sup_norm_bound(&two, &g, &params, 1e-7, flow::DEFAULT_STEP_BUDGET).unwrap();
    assert_eq!(b2.kappa, 2.0);
    assert_eq!(b2.bound, b2.v_max + 2.0);
}

#[test]
fn stadium_barrier_rejected() {
    let d = DomainSpec::stadium(0.5, 1.5, 0.25, 2).unwrap();
    let g = grid(&d, 1.0 / 16.0);
    let p = Ibvp::new(d, ScalarFn::constant(0.0), ScalarFn::constant(0.0)).unwrap();
    let params = FlowParams::new(0.05, 0.0).unwrap();
    assert!(matches!(
        barriers::build_upper_barrier(&p, &g, &params, None),
        Err(barriers::BarrierError::FlatBoundary { .. })
    ));
}

#[test]
fn bump_dissipation_matches_energy_drop() {
    let g = grid(&ball(), 1.0 / 16.0);
    let params = FlowParams::new(0.05, 0.0).unwrap();
    let r = flow::solve_ibvp(&bump_problem(), &g, &params, &RunOptions::new(1.0)).unwrap();
    let b = verify::dissipation_budget(&r, g.measure(), 1e-12);
    assert!(b.energy_drop > 0.0);
    assert!(b.identity_gap() <= 0.05 * b.energy_drop, "{} vs {}", b.identity_gap(), b.energy_drop);
    assert!(b.within_bound);

    let r3 = flow::solve_ibvp(&bump_problem(), &g, &params.with_nu(0.3), &RunOptions::new(0.5)).unwrap();
    let b3 = verify::dissipation_budget(&r3, g.measure(), 1e-12);
    assert!(b3.total.is_finite() && b3.within_bound);
}

#[test]
fn initial_slice_bound_for_linear_data_with_speed() {
    let g = grid(&ball(), 1.0 / 16.0);
    let params = FlowParams::new(0.05, 0.3).unwrap();
    let b0 = verify::ut_initial_slice_bound(&linear_problem(), &g, &params);
    let want = 0.3 * (0.05f64.powi(2) + 1.0).sqrt();
    assert!((b0 - want).abs() < 1e-12, "{b0} vs {want}");
}

#[test]
fn stationary_solver_output_has_no_violations() {
    let g = grid(&ball(), 1.0 / 16.0);
    let params = FlowParams::new(0.05, 0.0).unwrap();
    let r = flow::solve_ibvp(&linear_problem(), &g, &params, &RunOptions::new(0.1).with_snapshots(&[0.0, 0.05, 0.1]))
        .unwrap();
    for mode in [Mode::Sub, Mode::Super] {
        let v = verify::viscosity_spot_check(&r.snapshots, &g, &params, mode, &ProbeOptions::default()).unwrap();
        assert!(v.is_empty(), "{mode:?}: {}", v.len());
    }
}

#[test]
fn gradient_check_tolerance_scales_with_spacing() {
    let params = FlowParams::new(0.05, 0.0).unwrap();
    let steep = ScalarFn::new("steep", |x| x[0] + 2.0 * (1.0 - r2(x)).powi(3));
    for h in [1.0 / 8.0, 1.0 / 16.0] {
        let g = grid(&ball(), h);
        let p = Ibvp::new(ball(), ScalarFn::coordinate(0), steep.clone()).unwrap();
        let r = flow::solve_ibvp(&p, &g, &params, &RunOptions::new(0.1)).unwrap();
        let c = verify::gradient_interior_max_check(&r);
        assert_eq!(c.tolerance, 10.0 * h);
        assert!(c.passes, "h={h}: {} vs {}", c.interior_max, c.boundary_max);
    }
    let g = grid(&ball(), 1.0 / 16.0);
    let r = flow::solve_ibvp(&bump_problem(), &g, &params, &RunOptions::new(0.2)).unwrap();
    assert!(verify::gradient_interior_max_check(&r).passes);
}

#[test]
fn ramp_flatness_tracks_drift_at_each_time() {
    let d = DomainSpec::stadium(0.5, 1.5, 0.25, 2).unwrap();
    let h = 1.0 / 16.0;
    let g = grid(&d, h);
    let p = CylinderProblem::ramp(d, 0.5, 1.0, 0.5, 4.0 * h).unwrap();
    let params = FlowParams::new(0.05, 0.2).unwrap();
    let r = liouville::flatness_and_sandwich(&p, &g, &params, 0.5).unwrap();
    for (t, f) in r.t.iter().zip(&r.flatness) {
        assert!(*f <= 0.05 * 0.2 * t + 10.0 * h * 2.0, "t={t} F={f}");
    }
}

#[test]
fn ramp_lower_envelope_dominated_pointwise() {
    let d = DomainSpec::stadium(0.5, 1.5, 0.25, 2).unwrap();
    let p = CylinderProblem::ramp(d, 0.5, 1.0, 0.5, 0.125).unwrap();
    let e = liouville::build_envelopes(&p).unwrap();
    for i in 0..1000 {
        let tau = -1.75 + 3.5 * i as f64 / 999.0;
        let g = (2.0 * tau).clamp(0.0, 1.0);
        assert!(e.lower(tau) <= g + 1e-12, "tau={tau}");
        assert!(e.lower(tau) <= e.upper(tau));
    }
}

#[test]
fn snapshots_are_floored_and_counted() {
    let g = grid(&ball(), 1.0 / 8.0);
    let params = FlowParams::new(0.05, 0.0).unwrap();
    let r = flow::solve_ibvp(&bump_problem(), &g, &params, &RunOptions::new(0.1).with_snapshots(&[0.05, 0.1])).unwrap();
    assert_eq!(r.snapshots.len(), 2);
    assert_eq!(r.series.len() as u64, r.steps + 1);
    assert_eq!(*r.snapshot_steps.last().unwrap(), r.steps);
    let st: &FieldState = &r.snapshots[0];
    assert!(st.t <= 0.05 + 1e-15);
}
