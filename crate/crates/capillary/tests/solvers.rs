//! Nonlinear state-solver checks: a finite-difference oracle for the coupled
//! Jacobian, cross-validation of the damped Newton solve against the Picard
//! fixed-point iteration, warm-start behaviour, and failure reporting.

use capillary::assemble::{BoundaryField, BulkField, BulkKind, TraceKind};
use capillary::mesh::{build_bulk_mesh, build_trace_mesh, BulkMesh, TraceMesh};
use capillary::state::{
    jacobian, residual, solve_newton, solve_picard, NewtonWorkspace, StateConfig, StateError,
    StatePair,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Sideways-driving Dirichlet datum used by the convergence studies: vanishes
/// on the bottom and top edges, antisymmetric between the side walls.
fn datum(mesh: &Arc<BulkMesh>) -> BulkField {
    BulkField::interpolate(mesh.clone(), BulkKind::Free, |x1, x2| {
        x2 * (1.0 - x2) * (1.0 - 2.0 * x1)
    })
}

fn control(trace: &Arc<TraceMesh>, f: impl Fn(f64) -> f64) -> BoundaryField {
    BoundaryField::interpolate(trace.clone(), TraceKind::Free, f)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// Applies a packed update `[trace interior | bulk interior]` to a state.
fn perturbed(state: &StatePair, delta: &[f64], scale: f64) -> StatePair {
    let mut out = state.clone();
    let m = out.g.mesh.n_interior();
    for j in 1..=m {
        out.g.values[j] += scale * delta[j - 1];
    }
    for (r, node) in out.y.mesh.interior_nodes().enumerate() {
        out.y.values[node] += scale * delta[m + r];
    }
    out
}

#[test]
fn zero_data_has_the_zero_solution() {
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let u = BoundaryField::zeros(trace, TraceKind::Free);
    let v = BulkField::zeros(mesh, BulkKind::Free);
    let (state, report) = solve_newton(&u, &v, &StateConfig::default()).unwrap();
    assert_eq!(report.iterations, 0, "zero residual at the zero start");
    assert!(max_abs(&state.g.values) == 0.0 && max_abs(&state.y.values) == 0.0);
    assert!(report.slope_feasible);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mesh = build_bulk_mesh(1); // n = 4: 3 trace + 9 bulk unknowns
    let trace = build_trace_mesh(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(41);

    // feasible nonzero state, away from both the zero start and collapse
    let mut g_vals = vec![0.0; trace.n_nodes()];
    for v in &mut g_vals[1..trace.n_nodes() - 1] {
        *v = rng.gen_range(-0.2..0.2);
    }
    let g = BoundaryField::from_values(trace.clone(), TraceKind::ZeroTrace, g_vals).unwrap();
    let mut y_vals = vec![0.0; mesh.n_nodes()];
    for node in mesh.interior_nodes() {
        y_vals[node] = rng.gen_range(-0.5..0.5);
    }
    let y = BulkField::from_values(mesh.clone(), BulkKind::ZeroBoundary, y_vals).unwrap();
    let state = StatePair { g, y };

    let u = control(&trace, |x| (std::f64::consts::PI * x).sin());
    let v = datum(&mesh);
    let kappa = 1.3;

    let jac = jacobian(&state, &v, kappa).unwrap();
    let dim = jac.n_trace + jac.n_bulk;
    assert_eq!(dim, 12);

    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let d: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jd = jac.system.matvec(&d);
        let fp = residual(&perturbed(&state, &d, eps), &u, &v, kappa).unwrap();
        let fm = residual(&perturbed(&state, &d, -eps), &u, &v, kappa).unwrap();
        for i in 0..dim {
            let fd = (fp[i] - fm[i]) / (2.0 * eps);
            worst = worst.max((jd[i] - fd).abs());
        }
        println!("direction {trial}: running max defect {worst:.3e}");
    }
    assert!(worst < 1e-7, "Jacobian-difference defect {worst:.3e}; expected O(ε²)");
}

#[test]
fn newton_and_picard_agree_across_levels() {
    // the two solvers share no linear algebra beyond the assembly routines,
    // so nodal agreement pins down both
    let cfg = StateConfig::default();
    println!(
        "{:>5} {:>12} {:>12} {:>8} {:>8}",
        "level", "max |Δγ|", "max |Δy|", "newton", "picard"
    );
    for level in 1..=3 {
        let mesh = build_bulk_mesh(level);
        let trace = build_trace_mesh(&mesh);
        let u = control(&trace, |x| 0.5 * (2.0 * std::f64::consts::PI * x).sin());
        let v = datum(&mesh);

        let (newton, rep_n) = solve_newton(&u, &v, &cfg).unwrap();
        let (picard, rep_p) = solve_picard(&u, &v, &cfg).unwrap();

        let dg = newton
            .g
            .values
            .iter()
            .zip(&picard.g.values)
            .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs()));
        let dy = newton
            .y
            .values
            .iter()
            .zip(&picard.y.values)
            .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs()));
        println!(
            "{:>5} {:>12.3e} {:>12.3e} {:>8} {:>8}",
            level, dg, dy, rep_n.iterations, rep_p.iterations
        );
        assert!(dg <= 1e-10, "level {level}: trace mismatch {dg:.3e}");
        assert!(dy <= 1e-10, "level {level}: bulk mismatch {dy:.3e}");
        assert!(rep_n.residual_norm <= cfg.newton_tol);
        assert!(rep_n.slope_feasible && rep_p.slope_feasible);
    }
}

#[test]
fn newton_residual_history_contracts() {
    let mesh = build_bulk_mesh(2);
    let trace = build_trace_mesh(&mesh);
    let u = control(&trace, |x| (3.0 * std::f64::consts::PI * x).sin());
    let v = datum(&mesh);
    let (_, report) = solve_newton(&u, &v, &StateConfig::default()).unwrap();

    println!("residuals: {:?}", report.residual_history);
    println!("damping:   {:?}", report.damping_history);
    assert!(report.iterations <= 8, "took {} Newton steps", report.iterations);
    let hist = &report.residual_history;
    assert!(hist.last().unwrap() < &1e-11);
    // overall contraction by many orders of magnitude
    assert!(hist.last().unwrap() / hist.first().unwrap() < 1e-9);
    assert!(report.damping_history.iter().all(|&l| (0.0..=1.0).contains(&l)));
}

#[test]
fn warm_started_solves_match_cold_ones() {
    let mesh = build_bulk_mesh(2);
    let trace = build_trace_mesh(&mesh);
    let v = datum(&mesh);
    let cfg = StateConfig::default();

    let u0 = control(&trace, |x| 0.4 * (std::f64::consts::PI * x).sin());
    let u1 = control(&trace, |x| 0.4 * (std::f64::consts::PI * x).sin() + 0.02 * x * (1.0 - x));

    let mut ws = NewtonWorkspace::new();
    let (_, first) = ws.solve(&u0, &v, &cfg).unwrap();
    // the second solve starts from the previous state; without an installed
    // factorization it still needs Newton steps, but very few
    let (warm, second) = ws.solve(&u1, &v, &cfg).unwrap();
    let (cold, cold_rep) = solve_newton(&u1, &v, &cfg).unwrap();

    println!(
        "iterations: first {}, warm {}, cold {}",
        first.iterations, second.iterations, cold_rep.iterations
    );
    assert!(second.iterations <= cold_rep.iterations);
    let dg = warm
        .g
        .values
        .iter()
        .zip(&cold.g.values)
        .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs()));
    assert!(dg <= 1e-10, "warm/cold trace mismatch {dg:.3e}");
}

#[test]
fn exhausted_newton_budget_reports_the_last_iterate() {
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let u = control(&trace, |x| (std::f64::consts::PI * x).sin());
    let v = datum(&mesh);
    let cfg = StateConfig { max_newton_iter: 0, ..StateConfig::default() };
    match solve_newton(&u, &v, &cfg) {
        Err(err @ StateError::NewtonStalled { .. }) => {
            assert!(err.is_recoverable());
            if let StateError::NewtonStalled { iterations, last_iterate, .. } = err {
                assert_eq!(iterations, 0);
                // budget of zero: the reported iterate is the initial guess
                assert_eq!(max_abs(&last_iterate.g.values), 0.0);
            }
        }
        other => panic!("expected a stalled Newton error, got {other:?}"),
    }
}

#[test]
fn exhausted_picard_budget_reports_the_last_iterate() {
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let u = control(&trace, |x| (std::f64::consts::PI * x).sin());
    let v = datum(&mesh);
    let cfg = StateConfig { max_picard_iter: 1, ..StateConfig::default() };
    match solve_picard(&u, &v, &cfg) {
        Err(err @ StateError::PicardStalled { .. }) => {
            assert!(err.is_recoverable());
            if let StateError::PicardStalled { iterations, update_history, last_iterate, .. } = err
            {
                assert_eq!(iterations, 1);
                assert_eq!(update_history.len(), 1);
                // one sweep from zero produces a nonzero iterate
                assert!(max_abs(&last_iterate.g.values) > 0.0);
            }
        }
        other => panic!("expected a stalled Picard error, got {other:?}"),
    }
}

#[test]
fn picard_updates_decay_geometrically() {
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let u = control(&trace, |x| 0.5 * (2.0 * std::f64::consts::PI * x).sin());
    let v = datum(&mesh);
    let (_, report) = solve_picard(&u, &v, &StateConfig::default()).unwrap();
    // successive updates (stored in residual_history) should contract with a
    // roughly constant factor
    let h = &report.residual_history;
    assert!(h.len() >= 3, "expected several Picard sweeps, got {}", h.len());
    for w in h.windows(2).take(h.len() - 1) {
        assert!(w[1] < w[0], "updates must shrink monotonically: {h:?}");
    }
    let ratio = h[h.len() - 2] / h[h.len() - 3];
    println!("late-sweep contraction factor: {ratio:.3e}");
    assert!(ratio < 0.5, "expected geometric decay, late ratio {ratio:.3}");
}

#[test]
fn mismatched_meshes_are_rejected() {
    let mesh = build_bulk_mesh(1);
    let other = build_bulk_mesh(2);
    let trace = build_trace_mesh(&other);
    let u = BoundaryField::zeros(trace, TraceKind::Free);
    let v = BulkField::zeros(mesh, BulkKind::Free);
    match solve_newton(&u, &v, &StateConfig::default()) {
        Err(StateError::Assemble(_)) => {}
        other => panic!("expected an assembly error, got {other:?}"),
    }
}
