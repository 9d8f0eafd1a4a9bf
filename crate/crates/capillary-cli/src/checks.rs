//! Self-contained invariant checks behind the `check` subcommand: algebraic
//! identities of the coefficient and assembly layers, solve/transpose
//! duality of the factorized Jacobian, and a finite-difference audit of the
//! adjoint gradient.  Each check reports one pass/fail line; they are cheap
//! enough to run before trusting a long experiment.

use capillary::assemble::{
    assemble_b_omega, BoundaryField, BulkField, BulkKind, TraceKind,
};
use capillary::coeff::eval_a;
use capillary::control::{reduced_cost, reduced_gradient, ControlConfig};
use capillary::linsolve::{factorize, solve};
use capillary::mesh::{build_bulk_mesh, build_trace_mesh};
use capillary::norms::trace_l2_inner;
use capillary::state::{jacobian, solve_newton, StateConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{datum_v, problem_data, ExperimentSpec};

/// Local Q1 stiffness matrix of −Δ on a square cell, corner order
/// `[bl, br, tr, tl]` (independent of the cell size).
const LAPLACE_LOCAL: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Outcome of one invariant check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// det A[γ] = 1 on a 10×10×10 grid of (γ, γ′, x₂).
pub fn check_unit_determinant() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                let gamma = -0.9 + 3.0 * i as f64 / 9.0;
                let dgamma = -2.0 + 4.0 * j as f64 / 9.0;
                let x2 = k as f64 / 9.0;
                let a = eval_a(gamma, dgamma, x2).expect("grid stays above the collapse guard");
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                worst = worst.max((det - 1.0).abs());
            }
        }
    }
    outcome("unit-determinant", worst <= 1e-12, format!("max |det A − 1| = {worst:.3e}"))
}

/// The bulk form at flat geometry is the Q1 Laplace matrix.
pub fn check_flat_laplace() -> CheckOutcome {
    let mesh = build_bulk_mesh(0);
    let trace = build_trace_mesh(&mesh);
    let flat = BoundaryField::zeros(trace, TraceKind::ZeroTrace);
    let assembled = assemble_b_omega(&mesh, &flat)
        .expect("flat geometry assembles")
        .to_dense();

    let nn = mesh.n_nodes();
    let mut reference = vec![vec![0.0_f64; nn]; nn];
    for cell in &mesh.cells {
        for (a, &i) in cell.iter().enumerate() {
            for (b, &j) in cell.iter().enumerate() {
                reference[i][j] += LAPLACE_LOCAL[a][b];
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..nn {
        for j in 0..nn {
            worst = worst.max((assembled[i][j] - reference[i][j]).abs());
        }
    }
    outcome("flat-laplace", worst <= 1e-14, format!("max entry defect = {worst:.3e}"))
}

/// ⟨J⁻¹b, c⟩ = ⟨b, J⁻ᵀc⟩ on the Jacobian of a converged nonlinear state.
pub fn check_transpose_duality(seed: u64) -> CheckOutcome {
    let mesh = build_bulk_mesh(2);
    let trace = build_trace_mesh(&mesh);
    let u = BoundaryField::interpolate(trace, TraceKind::Free, |x| {
        0.4 * (3.0 * std::f64::consts::PI * x).sin()
    });
    let v = BulkField::interpolate(mesh.clone(), BulkKind::Free, datum_v);
    let (state, _) = match solve_newton(&u, &v, &StateConfig::default()) {
        Ok(s) => s,
        Err(e) => return outcome("transpose-duality", false, format!("state solve failed: {e}")),
    };
    let jac = jacobian(&state, &v, 1.0).expect("jacobian at the converged state");
    let f = factorize(&jac.system).expect("jacobian factorizes");

    let dim = jac.n_trace + jac.n_bulk;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = solve(&f, &b, false).expect("forward solve");
        let y = solve(&f, &c, true).expect("transpose solve");
        let lhs: f64 = x.iter().zip(&c).map(|(&p, &q)| p * q).sum();
        let rhs: f64 = b.iter().zip(&y).map(|(&p, &q)| p * q).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    outcome("transpose-duality", worst <= 1e-10, format!("max pairing defect = {worst:.3e}"))
}

/// Adjoint gradient vs central differences of the reduced cost.
pub fn check_gradient(seed: u64) -> CheckOutcome {
    let spec = ExperimentSpec::for_example(1).expect("example 1 exists");
    let data = match problem_data(&spec, 1) {
        Ok(d) => d,
        Err(e) => return outcome("adjoint-gradient", false, format!("data failed: {e}")),
    };
    let cfg = ControlConfig { newton_tol: 1e-13, ..ControlConfig::new(1e-3) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let field = |rng: &mut ChaCha8Rng, amp: f64| {
        let values = (0..data.trace.n_nodes()).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        BoundaryField::from_values(data.trace.clone(), TraceKind::Free, values)
            .expect("free field of matching length")
    };

    let mut best: f64 = f64::INFINITY;
    for _ in 0..2 {
        let u = field(&mut rng, 0.3);
        let w = field(&mut rng, 1.0);
        let grad = match reduced_gradient(&u, &cfg, &data) {
            Ok(g) => g,
            Err(e) => return outcome("adjoint-gradient", false, format!("gradient failed: {e}")),
        };
        let dd = trace_l2_inner(&grad, &w);
        for eps in [1e-3, 1e-4] {
            let shift = |s: f64| {
                BoundaryField::from_values(
                    data.trace.clone(),
                    TraceKind::Free,
                    u.values.iter().zip(&w.values).map(|(&a, &b)| a + s * b).collect(),
                )
                .expect("shifted control")
            };
            let plus = reduced_cost(&shift(eps), &cfg, &data);
            let minus = reduced_cost(&shift(-eps), &cfg, &data);
            let (Ok(plus), Ok(minus)) = (plus, minus) else {
                return outcome("adjoint-gradient", false, "cost evaluation failed".into());
            };
            let fd = (plus - minus) / (2.0 * eps);
            best = best.min((fd - dd).abs() / dd.abs().max(1e-30));
        }
    }
    outcome("adjoint-gradient", best <= 1e-6, format!("best relative defect = {best:.3e}"))
}

/// Runs every check (cheap; a few seconds).
pub fn run_invariant_checks(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_unit_determinant(),
        check_flat_laplace(),
        check_transpose_duality(seed),
        check_gradient(seed),
    ]
}
