//! Constrained MPC on the double integrator: terminal sets, the Bellman
//! operator on extended-real costs, and closed-loop costs.

use mpc_bounds::cmpc::{
    bellman_apply, feasible_region_grid, suboptimality_map, ConstrainedProblem, GridSpec, MpcController,
    TerminalDesign, TerminalGain,
};
use mpc_bounds::par::Exec;
use mpc_bounds::{HPolytope, LqSystem, Matrix, SymMatrix, Vector};
use proptest::prelude::*;

fn problem() -> ConstrainedProblem {
    let sys = LqSystem::new(
        Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        SymMatrix::identity(2),
        SymMatrix::identity(1),
    )
    .unwrap();
    ConstrainedProblem::new(
        sys,
        HPolytope::symmetric_box(&[5.0, 5.0]).unwrap(),
        HPolytope::symmetric_box(&[1.0]).unwrap(),
    )
    .unwrap()
}

fn design(prob: &ConstrainedProblem, zeta: f64) -> TerminalDesign {
    TerminalDesign::zeta(prob, zeta, TerminalGain::ZetaProblem).unwrap()
}

#[test]
fn terminal_sets_are_invariant_and_admissible() {
    let prob = problem();
    for (seed, z) in [1.0, 5.0, 50.0].into_iter().enumerate() {
        let d = design(&prob, z);
        for x in d.s.sample_hit_and_run(1000, 5, seed as u64).unwrap() {
            assert!(d.s.max_violation(&(d.gain.closed_loop() * &x)).unwrap() <= 1e-8);
            assert!(prob.state_set().max_violation(&x).unwrap() <= 1e-8);
            assert!(prob.input_set().max_violation(&(d.gain.matrix() * &x)).unwrap() <= 1e-8);
        }
    }
}

#[test]
fn terminal_cost_is_in_region_of_decreasing() {
    // (TJ)(x) ≤ J(x) = x'Kx on S, and J = +∞ off S makes the inequality trivial there.
    let prob = problem();
    let d = design(&prob, 50.0);
    for x in d.s.sample_hit_and_run(500, 5, 11).unwrap() {
        let tj = bellman_apply(&prob, &d, &x).unwrap();
        assert!(tj <= d.k.quad_form(&x) + 1e-7, "{tj} > {}", d.k.quad_form(&x));
    }
}

#[test]
fn larger_terminal_weight_enlarges_the_terminal_set() {
    let prob = problem();
    let base = design(&prob, 1.0).s.volume(0, Exec::Sequential).unwrap().value;
    for z in [5.0, 15.0, 25.0, 35.0] {
        let v = design(&prob, z).s.volume(0, Exec::Sequential).unwrap().value;
        assert!(v >= base * (1.0 - 1e-9), "zeta {z}: {v} < {base}");
    }
}

#[test]
fn feasible_region_contains_the_riccati_region() {
    let prob = problem();
    let spec = GridSpec::over(prob.state_set(), 41).unwrap();
    let d = design(&prob, 50.0);
    let big = feasible_region_grid(&prob, &d, 3, &spec, Exec::Sequential).unwrap();
    let small = feasible_region_grid(
        &prob,
        &TerminalDesign::optimal(&prob).unwrap(),
        3,
        &spec,
        Exec::Sequential,
    )
    .unwrap();
    for (a, b) in big.cells.iter().zip(&small.cells) {
        assert!(a.feasible || !b.feasible, "{:?}", a.x);
    }
    assert!(big.feasible_count() > small.feasible_count());
    // Refined boundary points are feasible and lie between grid points.
    let ctrl = MpcController::new(&prob, &d, 3).unwrap();
    for p in &big.boundary {
        assert!(ctrl.value(&Vector::from_column_slice(p)).unwrap().is_finite());
    }
}

#[test]
fn grid_sweeps_do_not_depend_on_execution_mode() {
    let prob = problem();
    let d = design(&prob, 50.0);
    let spec = GridSpec::new([-4.0, -2.0], [4.0, 2.0], 9).unwrap();
    let a = suboptimality_map(&prob, &d, 3, &spec, Exec::Sequential).unwrap();
    let b = suboptimality_map(&prob, &d, 3, &spec, Exec::Parallel).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let (gap, _) = a.max_rel_gap().unwrap();
    assert!((0.0..0.005).contains(&gap), "{gap}");
}

#[test]
fn rollout_accounts_for_every_stage() {
    let prob = problem();
    let d = design(&prob, 50.0);
    let ctrl = MpcController::new(&prob, &d, 3).unwrap();
    let r = ctrl.rollout(&Vector::from_column_slice(&[-4.0, 2.0])).unwrap();
    assert!(r.feasible);
    let sum: f64 = r.stage_costs.iter().sum();
    assert!((r.total - sum - r.tail).abs() <= 1e-9 * r.total);
    assert_eq!(r.states.len(), r.controls.len() + 1);
    for u in &r.controls {
        assert!(u[0].abs() <= 1.0 + 1e-9);
    }
    // The value decreases along the closed loop by at least the stage cost.
    for k in 0..r.values.len() - 1 {
        assert!(r.values[k + 1] <= r.values[k] - r.stage_costs[k] + 1e-6 * r.values[k].max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_loop_cost_below_horizon_value(x1 in -5.0f64..5.0, x2 in -5.0f64..5.0) {
        let prob = problem();
        let d = design(&prob, 50.0);
        let ctrl = MpcController::new(&prob, &d, 3).unwrap();
        let x = Vector::from_column_slice(&[x1, x2]);
        let v = ctrl.value(&x).unwrap();
        let j = ctrl.closed_loop_cost(&x).unwrap();
        prop_assert_eq!(v.is_finite(), j.is_finite());
        if v.is_finite() {
            prop_assert!(j <= v + 1e-6 * v.max(1.0), "{} > {}", j, v);
            // Lower bound: the unconstrained optimum.
            prop_assert!(j >= prob.kstar().quad_form(&x) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn stage_cost_is_infinite_outside_constraints(x1 in -8.0f64..8.0, x2 in -8.0f64..8.0, u in -2.0f64..2.0) {
        let prob = problem();
        let x = Vector::from_column_slice(&[x1, x2]);
        let uv = Vector::from_column_slice(&[u]);
        let c = prob.stage_cost(&x, &uv).unwrap();
        let inside = x1.abs() <= 5.0 && x2.abs() <= 5.0 && u.abs() <= 1.0;
        prop_assert_eq!(c.is_finite(), inside);
        if inside {
            prop_assert!((c - (x1 * x1 + x2 * x2 + u * u)).abs() <= 1e-12);
        }
    }
}
