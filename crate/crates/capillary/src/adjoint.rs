//! Adjoint system: transposed state Jacobian against the cost derivatives.
//!
//! At a converged state, the adjoint pair `(S, R₀)` solves `Jᵀ w = rhs`,
//! where `J` is the state Jacobian and `rhs` carries the partial derivatives
//! of the tracking cost with respect to the packed state unknowns.  The
//! reported bulk adjoint is the composite `R = R₀ + E S` (the same lift that
//! builds the state test space), so `R` vanishes on Σ and equals `S` on Γ.
//!
//! The reduced-cost gradient is then `λu + S` — see [`crate::control`].

use crate::assemble::{
    self, AssembleError, BoundaryField, BulkField, BulkKind, TraceKind, GAUSS_PTS,
};
use crate::linsolve::{self, Factorization};
use crate::state::{self, StateError, StatePair};

/// Adjoint solution: trace multiplier `S` and composite bulk multiplier `R`.
#[derive(Debug, Clone)]
pub struct AdjointPair {
    pub s: BoundaryField,
    pub r: BulkField,
}

/// Packed adjoint right-hand side `[∂J/∂γ | ∂J/∂Y]` at `state`.
///
/// The trace rows carry the γ-tracking term `(M (γ−γ_d))_j` plus, for μ>0,
/// the exact γ-derivative of the quadrature tracking cost
/// `(μ/2)∫(W−y_d)²·(1+γ)`, i.e. `(μ/2)∫(W−y_d)² Φ_j(x₁)`.  The bulk rows
/// carry `μ∫(W−y_d)(1+γ)ψ_i`.
pub fn adjoint_rhs(
    state: &StatePair,
    gamma_d: &BoundaryField,
    y_d: &BulkField,
    mu: f64,
    v: &BulkField,
) -> Result<Vec<f64>, StateError> {
    let mesh = &state.y.mesh;
    let trace = &state.g.mesh;
    if gamma_d.mesh.bulk_n != trace.bulk_n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: gamma_d.mesh.bulk_n }.into());
    }
    if y_d.mesh.n != mesh.n || v.mesh.n != mesh.n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: y_d.mesh.n }.into());
    }
    let n = mesh.n;
    let m = trace.n_interior();
    let h = mesh.h();

    let diff: Vec<f64> =
        state.g.values.iter().zip(&gamma_d.values).map(|(a, b)| a - b).collect();
    let mg = assemble::assemble_mass_1d(trace).matvec(&diff);

    let mut rhs = vec![0.0; m + mesh.n_interior()];
    rhs[..m].copy_from_slice(&mg[1..=m]);

    if mu != 0.0 {
        let mut bulk_row = vec![usize::MAX; mesh.n_nodes()];
        for (r, node) in mesh.interior_nodes().enumerate() {
            bulk_row[node] = m + r;
        }
        let w: Vec<f64> = state.y.values.iter().zip(&v.values).map(|(a, b)| a + b).collect();
        for cy in 0..n {
            for cx in 0..n {
                let cell = mesh.cells[cy * n + cx];
                let (g_l, g_r) = (state.g.values[cx], state.g.values[cx + 1]);
                for &eta in &GAUSS_PTS {
                    for &xi in &GAUSS_PTS {
                        let shape = assemble::q1_shape(xi, eta);
                        let delta: f64 = (0..4)
                            .map(|a| (w[cell[a]] - y_d.values[cell[a]]) * shape[a])
                            .sum();
                        let gamma = g_l * (1.0 - xi) + g_r * xi;
                        let weight = 0.25 * h * h;
                        // trace hats alive on this cell column, as functions
                        // of x₁ only
                        for (kc, phi) in [(cx, 1.0 - xi), (cx + 1, xi)] {
                            if (1..=m).contains(&kc) {
                                rhs[kc - 1] += 0.5 * mu * weight * delta * delta * phi;
                            }
                        }
                        for a in 0..4 {
                            let row = bulk_row[cell[a]];
                            if row != usize::MAX {
                                rhs[row] += mu * weight * delta * (1.0 + gamma) * shape[a];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(rhs)
}

/// Solves the adjoint system with a ready factorization of the state
/// Jacobian at `state` (the transpose solve shares the factorization).
pub fn solve_adjoint_factored(
    state: &StatePair,
    fact: &Factorization,
    rhs: &[f64],
) -> Result<AdjointPair, StateError> {
    let mesh = &state.y.mesh;
    let trace = &state.g.mesh;
    let n = mesh.n;
    let m = trace.n_interior();
    let w = fact.solve(rhs, true)?;

    let mut s = BoundaryField::zeros(trace.clone(), TraceKind::ZeroTrace);
    s.values[1..=m].copy_from_slice(&w[..m]);

    // R = R₀ + E S nodally: interior gets the solved values, the lift adds
    // S(x₁)·x₂ everywhere (zero on Σ, S on Γ)
    let mut r = BulkField::zeros(mesh.clone(), BulkKind::Free);
    for (idx, node) in mesh.interior_nodes().enumerate() {
        r.values[node] = w[m + idx];
    }
    for iy in 0..=n {
        let x2 = iy as f64 / n as f64;
        for ix in 0..=n {
            r.values[mesh.node_index(ix, iy)] += s.values[ix] * x2;
        }
    }
    Ok(AdjointPair { s, r })
}

/// Assembles, factorizes and solves the adjoint system at `state`.
pub fn solve_adjoint(
    state: &StatePair,
    rhs: &[f64],
    v: &BulkField,
    kappa: f64,
) -> Result<AdjointPair, StateError> {
    let jac = state::jacobian(state, v, kappa)?;
    let fact = linsolve::factorize(&jac.system)?;
    solve_adjoint_factored(state, &fact, rhs)
}

/// Quadrature value of the μ-tracking cost `(μ/2)∫(W−y_d)²(1+γ)` at `state`
/// (the same 2×2 rule the adjoint right-hand side differentiates).
pub fn tracking_cost(state: &StatePair, y_d: &BulkField, mu: f64, v: &BulkField) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mesh = &state.y.mesh;
    let n = mesh.n;
    let h = mesh.h();
    let w: Vec<f64> = state.y.values.iter().zip(&v.values).map(|(a, b)| a + b).collect();
    let mut total = 0.0;
    for cy in 0..n {
        for cx in 0..n {
            let cell = mesh.cells[cy * n + cx];
            let (g_l, g_r) = (state.g.values[cx], state.g.values[cx + 1]);
            for &eta in &GAUSS_PTS {
                for &xi in &GAUSS_PTS {
                    let shape = assemble::q1_shape(xi, eta);
                    let delta: f64 =
                        (0..4).map(|a| (w[cell[a]] - y_d.values[cell[a]]) * shape[a]).sum();
                    let gamma = g_l * (1.0 - xi) + g_r * xi;
                    total += 0.25 * h * h * delta * delta * (1.0 + gamma);
                }
            }
        }
    }
    0.5 * mu * total
}
