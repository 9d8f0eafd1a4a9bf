//! The coupled nonlinear state system and its solvers.
//!
//! Unknowns are the free-boundary trace γ (zero-trace on the Γ partition)
//! and the bulk correction Y (zero on all of ∂Ω); the physical potential is
//! `W = Y + v`.  With `E` the `ξ(x₁)·x₂` lift of trace test functions, the
//! discrete system reads
//!
//! ```text
//! F_t[j] = κ·(B_Γ γ)_j + ∫ A[γ]∇W·∇(E Φ_j) − (M u)_j = 0   (trace rows)
//! F_b[i] = ∫ A[γ]∇W·∇ψ_i                            = 0   (bulk rows)
//! ```
//!
//! packed as `[trace interior | bulk interior]`.  The Jacobian couples the
//! blocks through the geometry derivative `DA[γ]` and is assembled in the
//! same packed order.
//!
//! Two solvers are provided: a damped Newton method (error-oriented natural
//! monotonicity test, step halving) and the linearize-and-alternate Picard
//! splitting (trace solve with frozen coefficient, then bulk solve with the
//! fresh geometry).  Newton is the production path; Picard is the
//! cross-validation oracle and the contraction witness.

use thiserror::Error;

use crate::assemble::{
    self, AssembleError, BoundaryField, BulkField, BulkKind, SparseSystem, TraceKind,
};
use crate::linsolve::{self, Factorization, LinsolveError};
use crate::mesh::BulkMesh;

#[derive(Debug, Error)]
pub enum StateError {
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
    #[error("Newton did not converge after {iterations} iterations (last residual {last_residual:.3e})")]
    NewtonStalled {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
        last_iterate: Box<StatePair>,
    },
    #[error("Picard iteration did not reach tolerance after {iterations} iterations (last update {last_update:.3e})")]
    PicardStalled {
        iterations: usize,
        last_update: f64,
        update_history: Vec<f64>,
        last_iterate: Box<StatePair>,
    },
}

impl StateError {
    /// True for failures a shorter step / better initial guess can cure
    /// (collapsed trial geometry, stalled iteration) as opposed to structural
    /// errors like mesh mismatches.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            StateError::Assemble(AssembleError::Geometry(_))
                | StateError::NewtonStalled { .. }
                | StateError::PicardStalled { .. }
        )
    }
}

/// A state solution (γ, Y).  The physical potential is `Y + v`.
#[derive(Debug, Clone)]
pub struct StatePair {
    pub g: BoundaryField,
    pub y: BulkField,
}

/// Packed Jacobian of the state residual, trace rows/columns first.
#[derive(Debug)]
pub struct StateJacobian {
    pub system: SparseSystem,
    pub n_trace: usize,
    pub n_bulk: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StateConfig {
    pub kappa: f64,
    /// Absolute max-norm residual tolerance for Newton.
    pub newton_tol: f64,
    /// Successive-update max-norm tolerance for Picard.
    pub picard_tol: f64,
    pub max_newton_iter: usize,
    pub max_picard_iter: usize,
    /// Smallest admissible Newton damping factor before giving up.
    pub min_damping: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            kappa: 1.0,
            newton_tol: 1e-11,
            picard_tol: 1e-13,
            max_newton_iter: 40,
            max_picard_iter: 400,
            min_damping: 1.0 / 64.0,
        }
    }
}

/// Convergence record of one nonlinear solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// Max-norm of the true residual at the returned state.
    pub residual_norm: f64,
    /// Newton: residual max-norms per accepted step.  Picard: successive
    /// update max-norms.
    pub residual_history: Vec<f64>,
    /// Damping factors of accepted Newton steps (empty for Picard).
    pub damping_history: Vec<f64>,
    /// `max_k |γ′|` over the partition intervals at the solution.
    pub max_slope: f64,
    /// Whether the pointwise slope bound |γ′| ≤ 1 holds (checked, not
    /// enforced; the continuous analysis needs it, the solver does not).
    pub slope_feasible: bool,
}

fn check_problem(state: &StatePair, u: &BoundaryField, v: &BulkField) -> Result<(), StateError> {
    let mesh = &state.y.mesh;
    let trace = &state.g.mesh;
    if trace.bulk_n != mesh.n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: trace.bulk_n }.into());
    }
    if u.mesh.bulk_n != trace.bulk_n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: u.mesh.bulk_n }.into());
    }
    if v.mesh.n != mesh.n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: v.mesh.n }.into());
    }
    Ok(())
}

fn max_abs_slope(g: &BoundaryField) -> f64 {
    (0..g.mesh.bulk_n).map(|k| g.slope(k).abs()).fold(0.0, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// Packed residual `[F_t | F_b]` of the state system at `state`.
pub fn residual(
    state: &StatePair,
    u: &BoundaryField,
    v: &BulkField,
    kappa: f64,
) -> Result<Vec<f64>, StateError> {
    check_problem(state, u, v)?;
    let mesh = &state.y.mesh;
    let k_all = assemble::assemble_b_omega(mesh, &state.g)?;
    let w: Vec<f64> = state.y.values.iter().zip(&v.values).map(|(a, b)| a + b).collect();
    let z = k_all.matvec(&w);
    Ok(residual_from_flux(mesh, &state.g, u, &z, kappa))
}

/// Assembles the packed residual given the flux vector `z = B_Ω[γ]·W`.
fn residual_from_flux(
    mesh: &BulkMesh,
    g: &BoundaryField,
    u: &BoundaryField,
    z: &[f64],
    kappa: f64,
) -> Vec<f64> {
    let trace = &g.mesh;
    let n = mesh.n;
    let m = trace.n_interior();
    let bg = assemble::assemble_b_gamma(trace, kappa).matvec(&g.values);
    let mu = assemble::assemble_mass_1d(trace).matvec(&u.values);
    let mut f = vec![0.0; m + mesh.n_interior()];
    for j in 1..=m {
        // lifted test function E Φ_j has nodal value (iy/n) on column j
        let mut lz = 0.0;
        for iy in 1..=n {
            lz += (iy as f64 / n as f64) * z[mesh.node_index(j, iy)];
        }
        f[j - 1] = bg[j] + lz - mu[j];
    }
    for (r, node) in mesh.interior_nodes().enumerate() {
        f[m + r] = z[node];
    }
    f
}

/// Packed Jacobian of [`residual`] at `state`.
pub fn jacobian(
    state: &StatePair,
    v: &BulkField,
    kappa: f64,
) -> Result<StateJacobian, StateError> {
    let mesh = &state.y.mesh;
    let trace = &state.g.mesh;
    if trace.bulk_n != mesh.n || v.mesh.n != mesh.n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: trace.bulk_n }.into());
    }
    let n = mesh.n;
    let m = trace.n_interior();
    let nb = mesh.n_interior();

    let w_values: Vec<f64> = state.y.values.iter().zip(&v.values).map(|(a, b)| a + b).collect();
    let w = BulkField { mesh: mesh.clone(), values: w_values, kind: BulkKind::Free };
    let k_all = assemble::assemble_b_omega(mesh, &state.g)?;
    let (c1, c2) = assemble::assemble_coupling_blocks(mesh, &state.g, &w)?;
    let bg = assemble::assemble_b_gamma(trace, kappa);

    // packed row of each bulk node (usize::MAX for boundary nodes)
    let mut bulk_row = vec![usize::MAX; mesh.n_nodes()];
    for (r, node) in mesh.interior_nodes().enumerate() {
        bulk_row[node] = m + r;
    }
    let inv_n = 1.0 / n as f64;

    let nnz_estimate = bg.nnz() + 2 * (c1.nnz() + c2.nnz()) + 2 * k_all.nnz();
    let mut sys = SparseSystem::with_capacity(m + nb, m + nb, nnz_estimate);

    // trace-trace: κ B_Γ on interior rows/columns
    for &(i, j, val) in bg.triplets() {
        if (1..=m).contains(&i) && (1..=m).contains(&j) {
            sys.push(i - 1, j - 1, val);
        }
    }
    // coupling blocks: direct bulk rows, plus the lifted-test fold into trace
    // rows with weight x₂ = iy/n
    for block in [&c1, &c2] {
        for &(node, k, val) in block.triplets() {
            if !(1..=m).contains(&k) {
                continue;
            }
            if bulk_row[node] != usize::MAX {
                sys.push(bulk_row[node], k - 1, val);
            }
            let (ix, iy) = ((node % (n + 1)), (node / (n + 1)));
            if iy > 0 && (1..=m).contains(&ix) {
                sys.push(ix - 1, k - 1, iy as f64 * inv_n * val);
            }
        }
    }
    // diffusion block: direct interior rows/columns, plus the lifted fold
    for &(node, j, val) in k_all.triplets() {
        if bulk_row[j] == usize::MAX {
            continue;
        }
        if bulk_row[node] != usize::MAX {
            sys.push(bulk_row[node], bulk_row[j], val);
        }
        let (ix, iy) = ((node % (n + 1)), (node / (n + 1)));
        if iy > 0 && (1..=m).contains(&ix) {
            sys.push(ix - 1, bulk_row[j], iy as f64 * inv_n * val);
        }
    }
    Ok(StateJacobian { system: sys, n_trace: m, n_bulk: nb })
}

// --- Newton -----------------------------------------------------------------

/// Warm-startable Newton driver.  Keeps the last converged state as the next
/// initial guess and the last Jacobian factorization for cheap chord steps —
/// across an optimizer's line search the state barely moves, so most solves
/// finish without a single new factorization.
#[derive(Default)]
pub struct NewtonWorkspace {
    state: Option<(Vec<f64>, Vec<f64>)>,
    fact: Option<Factorization>,
}

impl NewtonWorkspace {
    pub fn new() -> Self {
        NewtonWorkspace::default()
    }

    /// Stores a state and its (fresh) Jacobian factorization for reuse.
    pub fn install(&mut self, state: &StatePair, fact: Factorization) {
        self.state = Some((state.g.values.clone(), state.y.values.clone()));
        self.fact = Some(fact);
    }

    pub fn clear(&mut self) {
        self.state = None;
        self.fact = None;
    }

    /// Solves the state system for control `u` and datum `v`.
    pub fn solve(
        &mut self,
        u: &BoundaryField,
        v: &BulkField,
        cfg: &StateConfig,
    ) -> Result<(StatePair, SolveReport), StateError> {
        let mesh = v.mesh.clone();
        let trace = u.mesh.clone();
        if trace.bulk_n != mesh.n {
            return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: trace.bulk_n }.into());
        }
        let m = trace.n_interior();
        let nb = mesh.n_interior();
        let dim = m + nb;

        let mut state = match &self.state {
            Some((g, y)) if g.len() == trace.n_nodes() && y.len() == mesh.n_nodes() => StatePair {
                g: BoundaryField { mesh: trace.clone(), values: g.clone(), kind: TraceKind::ZeroTrace },
                y: BulkField { mesh: mesh.clone(), values: y.clone(), kind: BulkKind::ZeroBoundary },
            },
            _ => StatePair {
                g: BoundaryField::zeros(trace.clone(), TraceKind::ZeroTrace),
                y: BulkField::zeros(mesh.clone(), BulkKind::ZeroBoundary),
            },
        };

        let mut f = residual(&state, u, v, cfg.kappa)?;
        let mut rn = max_abs(&f);
        let mut residual_history = vec![rn];
        let mut damping_history = Vec::new();
        let mut iterations = 0usize;

        // chord phase: reuse the installed factorization while it contracts
        if let Some(fact) = self.fact.as_ref().filter(|f| f.dim() == dim) {
            for _ in 0..6 {
                if rn <= cfg.newton_tol {
                    break;
                }
                let delta = fact.solve(&negated(&f), false)?;
                let trial = applied(&state, &delta, 1.0, m);
                match residual(&trial, u, v, cfg.kappa) {
                    Ok(ft) => {
                        let rt = max_abs(&ft);
                        if rt <= 0.3 * rn {
                            state = trial;
                            f = ft;
                            rn = rt;
                            iterations += 1;
                            residual_history.push(rn);
                            damping_history.push(1.0);
                            continue;
                        }
                    }
                    Err(StateError::Assemble(AssembleError::Geometry(_))) => {}
                    Err(e) => return Err(e),
                }
                break; // chord stopped contracting; fall through to full Newton
            }
        }

        // full Newton with natural-monotonicity damping
        while rn > cfg.newton_tol {
            if iterations >= cfg.max_newton_iter {
                return Err(StateError::NewtonStalled {
                    iterations,
                    last_residual: rn,
                    residual_history,
                    last_iterate: Box::new(state),
                });
            }
            let jac = jacobian(&state, v, cfg.kappa)?;
            let fact = linsolve::factorize(&jac.system)?;
            let delta = fact.solve(&negated(&f), false)?;
            let dn = max_abs(&delta);

            let mut lambda = 1.0_f64;
            loop {
                let trial = applied(&state, &delta, lambda, m);
                match residual(&trial, u, v, cfg.kappa) {
                    Ok(ft) => {
                        // natural monotonicity: the simplified-Newton correction
                        // at the trial point must shrink commensurately with λ
                        let dbar = fact.solve(&negated(&ft), false)?;
                        if max_abs(&dbar) <= (1.0 - 0.5 * lambda) * dn {
                            state = trial;
                            f = ft;
                            rn = max_abs(&f);
                            iterations += 1;
                            residual_history.push(rn);
                            damping_history.push(lambda);
                            break;
                        }
                    }
                    Err(StateError::Assemble(AssembleError::Geometry(_))) => {}
                    Err(e) => return Err(e),
                }
                lambda *= 0.5;
                if lambda < cfg.min_damping {
                    return Err(StateError::NewtonStalled {
                        iterations,
                        last_residual: rn,
                        residual_history,
                        last_iterate: Box::new(state),
                    });
                }
            }
            self.fact = Some(fact);
        }

        self.state = Some((state.g.values.clone(), state.y.values.clone()));
        let max_slope = max_abs_slope(&state.g);
        let report = SolveReport {
            iterations,
            residual_norm: rn,
            residual_history,
            damping_history,
            max_slope,
            slope_feasible: max_slope <= 1.0 + 1e-12,
        };
        Ok((state, report))
    }
}

fn negated(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| -x).collect()
}

/// `state + λ·δ` with δ packed `[trace interior | bulk interior]`.
fn applied(state: &StatePair, delta: &[f64], lambda: f64, m: usize) -> StatePair {
    let mut out = state.clone();
    for j in 1..=m {
        out.g.values[j] += lambda * delta[j - 1];
    }
    for (r, node) in out.y.mesh.interior_nodes().enumerate() {
        out.y.values[node] += lambda * delta[m + r];
    }
    out
}

/// One-shot damped Newton solve from a cold start.
pub fn solve_newton(
    u: &BoundaryField,
    v: &BulkField,
    cfg: &StateConfig,
) -> Result<(StatePair, SolveReport), StateError> {
    NewtonWorkspace::new().solve(u, v, cfg)
}

// --- Picard ------------------------------------------------------------------

/// Linearize-and-alternate fixed-point solve: a trace solve with the current
/// bulk flux as data, then a bulk solve on the updated geometry.  Converges
/// linearly for small data; used to cross-validate Newton.
pub fn solve_picard(
    u: &BoundaryField,
    v: &BulkField,
    cfg: &StateConfig,
) -> Result<(StatePair, SolveReport), StateError> {
    let mesh = v.mesh.clone();
    let trace = u.mesh.clone();
    if trace.bulk_n != mesh.n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: trace.bulk_n }.into());
    }
    let n = mesh.n;
    let m = trace.n_interior();
    let interior_trace: Vec<usize> = (1..=m).collect();
    let interior_bulk: Vec<usize> = mesh.interior_nodes().collect();

    let bg_int = assemble::assemble_b_gamma(&trace, cfg.kappa)
        .restrict(&interior_trace, &interior_trace);
    let bg_fact = linsolve::factorize(&bg_int)?;
    let mu = assemble::assemble_mass_1d(&trace).matvec(&u.values);

    let mut state = StatePair {
        g: BoundaryField::zeros(trace.clone(), TraceKind::ZeroTrace),
        y: BulkField::zeros(mesh.clone(), BulkKind::ZeroBoundary),
    };
    let mut update_history = Vec::new();

    for it in 1..=cfg.max_picard_iter {
        // trace half-step with the old geometry's flux
        let k_old = assemble::assemble_b_omega(&mesh, &state.g)?;
        let w: Vec<f64> = state.y.values.iter().zip(&v.values).map(|(a, b)| a + b).collect();
        let z = k_old.matvec(&w);
        let rhs_t: Vec<f64> = (1..=m)
            .map(|j| {
                let lz: f64 =
                    (1..=n).map(|iy| iy as f64 / n as f64 * z[mesh.node_index(j, iy)]).sum();
                mu[j] - lz
            })
            .collect();
        let g_int = bg_fact.solve(&rhs_t, false)?;
        let mut g_new = state.g.clone();
        g_new.values[1..=m].copy_from_slice(&g_int);

        // bulk half-step on the fresh geometry
        let k_new = assemble::assemble_b_omega(&mesh, &g_new)?;
        let zv = k_new.matvec(&v.values);
        let rhs_b: Vec<f64> = interior_bulk.iter().map(|&node| -zv[node]).collect();
        let k_int = k_new.restrict(&interior_bulk, &interior_bulk);
        let y_int = linsolve::factorize(&k_int)?.solve(&rhs_b, false)?;
        let mut y_new = state.y.clone();
        for (r, &node) in interior_bulk.iter().enumerate() {
            y_new.values[node] = y_int[r];
        }

        let diff = state
            .g
            .values
            .iter()
            .zip(&g_new.values)
            .chain(state.y.values.iter().zip(&y_new.values))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        state = StatePair { g: g_new, y: y_new };
        update_history.push(diff);

        if diff <= cfg.picard_tol {
            let rn = max_abs(&residual(&state, u, v, cfg.kappa)?);
            let max_slope = max_abs_slope(&state.g);
            let report = SolveReport {
                iterations: it,
                residual_norm: rn,
                residual_history: update_history,
                damping_history: Vec::new(),
                max_slope,
                slope_feasible: max_slope <= 1.0 + 1e-12,
            };
            return Ok((state, report));
        }
    }
    let last_update = update_history.last().copied().unwrap_or(f64::NAN);
    Err(StateError::PicardStalled {
        iterations: cfg.max_picard_iter,
        last_update,
        update_history,
        last_iterate: Box::new(state),
    })
}
