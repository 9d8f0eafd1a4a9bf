//! Reduced-cost optimization over the boundary control.
//!
//! The reduced functional is
//!
//! ```text
//! j(u) = ½‖γ(u) − γ_d‖²_{L²(0,1)} + (μ/2)∫(W(u) − y_d)²(1+γ(u)) + (λ/2)‖u‖²_{L²(0,1)}
//! ```
//!
//! with `(γ, Y)` the state solution and `W = Y + v`.  Its gradient's Riesz
//! representative in `L²(0,1)` is `λu + S`, with `S` the trace adjoint —
//! solving one transposed Jacobian system per gradient, independent of the
//! control dimension.
//!
//! [`optimize`] is a projected-gradient method on the control ball: the
//! search direction is `P(u − τ∇j) − u` with a safeguarded Barzilai–Borwein
//! step `τ`, globalized by monotone Armijo backtracking (feasible by
//! convexity of the ball), stopping when the gradient-map norm
//! `‖u − P(u − ∇j)‖_{L²}` meets the tolerance.  Gradients are exact at the
//! solver tolerance because each one re-factorizes the Jacobian at the
//! *converged* state; the factorization is then recycled as the next state
//! solve's chord, so an accepted optimizer step costs about one
//! factorization total.

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::adjoint::{self, AdjointPair};
use crate::assemble::{self, AssembleError, BoundaryField, BulkField, TraceKind};
use crate::linsolve::{self, LinsolveError};
use crate::mesh::{BulkMesh, TraceMesh};
use crate::norms::{norm_trace, trace_l2_inner, TraceNorm};
use crate::state::{self, NewtonWorkspace, SolveReport, StateConfig, StateError, StatePair};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
    #[error("invalid configuration: {name} = {value}")]
    InvalidConfig { name: &'static str, value: f64 },
    #[error("optimizer hit the iteration cap {iterations} with gradient map {grad_map_norm:.3e}")]
    MaxOptIter { iterations: usize, grad_map_norm: f64, trace: OptimizationTrace },
    #[error("line search stalled at optimizer iteration {iteration}")]
    LineSearchStalled { iteration: usize, trace: OptimizationTrace },
}

#[derive(Debug, Clone, Copy)]
pub struct ControlConfig {
    /// Control-cost weight λ > 0.
    pub lambda: f64,
    /// Bulk tracking weight μ ≥ 0.
    pub mu: f64,
    /// Surface tension coefficient κ > 0.
    pub kappa: f64,
    /// Radius of the admissible L² ball; `f64::INFINITY` disables the
    /// constraint.
    pub radius: f64,
    /// Stop when `‖u − P(u − ∇j)‖_{L²} ≤ grad_tol`.
    pub grad_tol: f64,
    pub max_opt_iter: usize,
    /// Residual tolerance passed to the inner Newton solves.
    pub newton_tol: f64,
}

impl ControlConfig {
    pub fn new(lambda: f64) -> Self {
        ControlConfig {
            lambda,
            mu: 0.0,
            kappa: 1.0,
            radius: f64::INFINITY,
            grad_tol: 1e-9,
            max_opt_iter: 5000,
            newton_tol: 1e-11,
        }
    }

    pub fn state_config(&self) -> StateConfig {
        StateConfig { kappa: self.kappa, newton_tol: self.newton_tol, ..StateConfig::default() }
    }

    fn validate(&self) -> Result<(), ControlError> {
        let positive: [(&'static str, f64); 4] = [
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("grad_tol", self.grad_tol),
            ("radius", self.radius),
        ];
        for (name, value) in positive {
            if value.is_nan() || value <= 0.0 {
                return Err(ControlError::InvalidConfig { name, value });
            }
        }
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(ControlError::InvalidConfig { name: "mu", value: self.mu });
        }
        if !self.lambda.is_finite() {
            return Err(ControlError::InvalidConfig { name: "lambda", value: self.lambda });
        }
        Ok(())
    }
}

/// Fixed problem data for one mesh level.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub bulk: Arc<BulkMesh>,
    pub trace: Arc<TraceMesh>,
    /// Dirichlet datum on Σ (bulk field carrying its boundary values).
    pub v: BulkField,
    /// Desired free-boundary profile.
    pub gamma_d: BoundaryField,
    /// Desired bulk potential (only enters for μ > 0).
    pub y_d: BulkField,
}

impl ProblemData {
    pub fn new(
        bulk: Arc<BulkMesh>,
        trace: Arc<TraceMesh>,
        v: BulkField,
        gamma_d: BoundaryField,
        y_d: BulkField,
    ) -> Result<Self, ControlError> {
        if trace.bulk_n != bulk.n || v.mesh.n != bulk.n || y_d.mesh.n != bulk.n {
            return Err(AssembleError::Incompatible { bulk_n: bulk.n, trace_n: trace.bulk_n }.into());
        }
        if gamma_d.mesh.bulk_n != trace.bulk_n {
            return Err(
                AssembleError::Incompatible { bulk_n: bulk.n, trace_n: gamma_d.mesh.bulk_n }.into()
            );
        }
        Ok(ProblemData { bulk, trace, v, gamma_d, y_d })
    }
}

/// Per-iteration optimizer record.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_map_norm: f64,
    pub control_norm: f64,
    /// Spectral (BB) step length proposed at this iterate.
    pub step: f64,
    /// Armijo factor accepted at the previous step.
    pub alpha: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct OptimizationTrace {
    pub records: Vec<IterRecord>,
    pub converged: bool,
    pub final_grad_map: f64,
}

/// Result of a successful optimization.
#[derive(Debug)]
pub struct Optimized {
    pub u: BoundaryField,
    pub state: StatePair,
    pub adjoint: AdjointPair,
    pub cost: f64,
    pub trace: OptimizationTrace,
    /// Newton report of the final state solve (slope feasibility lives here).
    pub state_report: SolveReport,
}

/// Projection onto the closed L² ball of the given radius (radial scaling).
pub fn project_ball(u: &BoundaryField, radius: f64) -> BoundaryField {
    if !radius.is_finite() {
        return u.clone();
    }
    let norm = norm_trace(u, TraceNorm::L2);
    if norm <= radius {
        return u.clone();
    }
    let scale = radius / norm;
    BoundaryField {
        mesh: u.mesh.clone(),
        values: u.values.iter().map(|&v| scale * v).collect(),
        kind: u.kind,
    }
}

fn field_like(u: &BoundaryField, values: Vec<f64>) -> BoundaryField {
    BoundaryField { mesh: u.mesh.clone(), values, kind: TraceKind::Free }
}

/// `u + c·d` as a free trace field.
fn axpy(u: &BoundaryField, c: f64, d: &[f64]) -> BoundaryField {
    field_like(u, u.values.iter().zip(d).map(|(&a, &b)| a + c * b).collect())
}

fn cost_of(pair: &StatePair, u: &BoundaryField, cfg: &ControlConfig, data: &ProblemData) -> f64 {
    let diff = field_like(
        &data.gamma_d,
        pair.g.values.iter().zip(&data.gamma_d.values).map(|(a, b)| a - b).collect(),
    );
    0.5 * trace_l2_inner(&diff, &diff)
        + 0.5 * cfg.lambda * trace_l2_inner(u, u)
        + adjoint::tracking_cost(pair, &data.y_d, cfg.mu, &data.v)
}

struct PointEval {
    state: StatePair,
    adjoint: AdjointPair,
    grad: BoundaryField,
    cost: f64,
    report: SolveReport,
}

/// Full evaluation at `u`: state solve, Jacobian factorization at the
/// converged state, adjoint solve, gradient and cost.  The fresh
/// factorization is installed into the workspace for the next solve.
fn eval_point(
    ws: &mut NewtonWorkspace,
    u: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
) -> Result<PointEval, ControlError> {
    let (pair, report) = ws.solve(u, &data.v, &cfg.state_config())?;
    let jac = state::jacobian(&pair, &data.v, cfg.kappa)?;
    let fact = linsolve::factorize(&jac.system)?;
    let rhs = adjoint::adjoint_rhs(&pair, &data.gamma_d, &data.y_d, cfg.mu, &data.v)?;
    let adj = adjoint::solve_adjoint_factored(&pair, &fact, &rhs)?;
    let grad = field_like(
        u,
        u.values.iter().zip(&adj.s.values).map(|(&uv, &sv)| cfg.lambda * uv + sv).collect(),
    );
    let cost = cost_of(&pair, u, cfg, data);
    ws.install(&pair, fact);
    Ok(PointEval { state: pair, adjoint: adj, grad, cost, report })
}

/// Reduced cost `j(u)` (one fresh state solve).
pub fn reduced_cost(
    u: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
) -> Result<f64, ControlError> {
    cfg.validate()?;
    let (pair, _) = state::solve_newton(u, &data.v, &cfg.state_config())?;
    Ok(cost_of(&pair, u, cfg, data))
}

/// Riesz representative of the reduced gradient, `λu + S` (one fresh state
/// and adjoint solve).
pub fn reduced_gradient(
    u: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
) -> Result<BoundaryField, ControlError> {
    cfg.validate()?;
    let mut ws = NewtonWorkspace::new();
    Ok(eval_point(&mut ws, u, cfg, data)?.grad)
}

/// `u − P(u − grad)` and its L² norm.
fn gradient_map(u: &BoundaryField, grad: &BoundaryField, radius: f64) -> (Vec<f64>, f64) {
    let stepped = axpy(u, -1.0, &grad.values);
    let projected = project_ball(&stepped, radius);
    let map: Vec<f64> =
        u.values.iter().zip(&projected.values).map(|(&a, &b)| a - b).collect();
    let norm = trace_l2_inner(&field_like(u, map.clone()), &field_like(u, map.clone())).max(0.0).sqrt();
    (map, norm)
}

/// Projected-gradient minimization of the reduced cost starting from zero.
pub fn optimize(cfg: &ControlConfig, data: &ProblemData) -> Result<Optimized, ControlError> {
    let u0 = BoundaryField::zeros(data.trace.clone(), TraceKind::Free);
    optimize_from(&u0, cfg, data)
}

/// Projected-gradient minimization of the reduced cost from a given start
/// (used for warm starts across λ values and mesh levels).
pub fn optimize_from(
    u0: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
) -> Result<Optimized, ControlError> {
    cfg.validate()?;
    if u0.mesh.bulk_n != data.trace.bulk_n {
        return Err(
            AssembleError::Incompatible { bulk_n: data.bulk.n, trace_n: u0.mesh.bulk_n }.into()
        );
    }
    let mut ws = NewtonWorkspace::new();
    let mut u = project_ball(u0, cfg.radius);
    let mut ev = eval_point(&mut ws, &u, cfg, data)?;
    let mut tau = 1.0_f64;
    let mut alpha_last = 1.0_f64;
    let mut records: Vec<IterRecord> = Vec::new();

    for iteration in 0..=cfg.max_opt_iter {
        let (_, gm) = gradient_map(&u, &ev.grad, cfg.radius);
        records.push(IterRecord {
            iteration,
            cost: ev.cost,
            grad_map_norm: gm,
            control_norm: norm_trace(&u, TraceNorm::L2),
            step: tau,
            alpha: alpha_last,
            newton_iterations: ev.report.iterations,
        });
        if gm <= cfg.grad_tol {
            let trace = OptimizationTrace { records, converged: true, final_grad_map: gm };
            return Ok(Optimized {
                u,
                state: ev.state,
                adjoint: ev.adjoint,
                cost: ev.cost,
                trace,
                state_report: ev.report,
            });
        }
        if iteration == cfg.max_opt_iter {
            let trace = OptimizationTrace { records, converged: false, final_grad_map: gm };
            return Err(ControlError::MaxOptIter {
                iterations: iteration,
                grad_map_norm: gm,
                trace,
            });
        }

        // spectral-step projected direction; fall back to the unit-step
        // gradient map if the long step fails to be a descent direction
        let target = project_ball(&axpy(&u, -tau, &ev.grad.values), cfg.radius);
        let mut d: Vec<f64> =
            target.values.iter().zip(&u.values).map(|(&t, &a)| t - a).collect();
        let mut dg = trace_l2_inner(&ev.grad, &field_like(&u, d.clone()));
        if dg >= 0.0 {
            let unit = project_ball(&axpy(&u, -1.0, &ev.grad.values), cfg.radius);
            d = unit.values.iter().zip(&u.values).map(|(&t, &a)| t - a).collect();
            dg = trace_l2_inner(&ev.grad, &field_like(&u, d.clone()));
            if dg >= 0.0 {
                let trace = OptimizationTrace { records, converged: false, final_grad_map: gm };
                return Err(ControlError::LineSearchStalled { iteration, trace });
            }
        }

        // monotone Armijo backtracking; trial states that collapse the
        // geometry or stall Newton count as rejections
        let mut accepted: Option<(BoundaryField, PointEval, f64)> = None;
        let mut alpha = 1.0_f64;
        for _ in 0..60 {
            let ut = axpy(&u, alpha, &d);
            match eval_point(&mut ws, &ut, cfg, data) {
                Ok(e2) => {
                    if e2.cost <= ev.cost + 1e-4 * alpha * dg {
                        accepted = Some((ut, e2, alpha));
                        break;
                    }
                }
                Err(ControlError::State(se)) if se.is_recoverable() => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        let Some((ut, e2, alpha)) = accepted else {
            let trace = OptimizationTrace { records, converged: false, final_grad_map: gm };
            return Err(ControlError::LineSearchStalled { iteration, trace });
        };

        // Barzilai–Borwein step for the next iteration, in the L² metric
        let s = field_like(&u, ut.values.iter().zip(&u.values).map(|(&a, &b)| a - b).collect());
        let yv = field_like(
            &u,
            e2.grad.values.iter().zip(&ev.grad.values).map(|(&a, &b)| a - b).collect(),
        );
        let ss = trace_l2_inner(&s, &s);
        let sy = trace_l2_inner(&s, &yv);
        tau = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-10, 1e8) } else { (tau * 10.0).min(1e8) };
        alpha_last = alpha;
        u = ut;
        ev = e2;
    }
    unreachable!("loop returns or errors at the iteration cap");
}

/// First-order optimality certificate: pairings `⟨∇j(ū), w − ū⟩_{L²}` for a
/// set of admissible samples, plus the gradient-map norm.
#[derive(Debug, Clone)]
pub struct ViReport {
    pub pairings: Vec<f64>,
    pub min_pairing: f64,
    pub grad_map_norm: f64,
}

pub fn check_variational_inequality(
    u_opt: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
    samples: &[BoundaryField],
) -> Result<ViReport, ControlError> {
    cfg.validate()?;
    let mut ws = NewtonWorkspace::new();
    let ev = eval_point(&mut ws, u_opt, cfg, data)?;
    let pairings: Vec<f64> = samples
        .iter()
        .map(|w| {
            let dir = field_like(
                u_opt,
                w.values.iter().zip(&u_opt.values).map(|(&a, &b)| a - b).collect(),
            );
            trace_l2_inner(&ev.grad, &dir)
        })
        .collect();
    let min_pairing = pairings.iter().copied().fold(f64::INFINITY, f64::min);
    let (_, grad_map_norm) = gradient_map(u_opt, &ev.grad, cfg.radius);
    Ok(ViReport { pairings, min_pairing, grad_map_norm })
}

/// Smallest eigenvalue diagnostic of the reduced Hessian at `u_opt`.
#[derive(Debug, Clone)]
pub struct HessianReport {
    pub min_eig: f64,
    /// Coordinate perturbation size used for the finite differences.
    pub eps: f64,
    /// Dense column-by-column construction (small meshes) vs Lanczos.
    pub dense: bool,
    /// Relative asymmetry `max|H−Hᵀ| / max|H|` of the dense FD Hessian —
    /// an estimate of the FD noise floor (exact Hessians are symmetric).
    pub symmetry_defect: Option<f64>,
    /// True when the estimated noise is within a factor 2 of the reported
    /// eigenvalue, i.e. the figure should not be trusted beyond its sign.
    pub noisy: bool,
    pub steps: usize,
}

/// Smallest reduced-Hessian eigenvalue at `u_opt` in the `L²(0,1)` metric
/// (finite differences of the adjoint gradient; defaults: eps 1e−4, dense up
/// to 96 control dofs, Lanczos beyond).
pub fn hessian_min_eig(
    u_opt: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
) -> Result<f64, ControlError> {
    hessian_diagnostics(u_opt, cfg, data, 1e-4, 96).map(|r| r.min_eig)
}

pub fn hessian_diagnostics(
    u_opt: &BoundaryField,
    cfg: &ControlConfig,
    data: &ProblemData,
    eps: f64,
    dense_limit: usize,
) -> Result<HessianReport, ControlError> {
    cfg.validate()?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(ControlError::InvalidConfig { name: "eps", value: eps });
    }
    let dim = u_opt.values.len();
    let mass_sys = assemble::assemble_mass_1d(&data.trace);
    let mut ws = NewtonWorkspace::new();
    let mut grad_at = |values: Vec<f64>| -> Result<Vec<f64>, ControlError> {
        let u = field_like(u_opt, values);
        Ok(eval_point(&mut ws, &u, cfg, data)?.grad.values)
    };

    if dim <= dense_limit {
        // dense G = ∂(∇j)/∂u by central differences, one coordinate at a time
        let mut g_cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut up = u_opt.values.clone();
            up[k] += eps;
            let gp = grad_at(up)?;
            let mut um = u_opt.values.clone();
            um[k] -= eps;
            let gm = grad_at(um)?;
            g_cols.push(gp.iter().zip(&gm).map(|(&a, &b)| (a - b) / (2.0 * eps)).collect());
        }
        // coefficient Hessian H = M·G is symmetric up to FD noise
        let mass_dense = mass_sys.to_dense();
        let mass = DMatrix::from_fn(dim, dim, |i, j| mass_dense[i][j]);
        let g_mat = DMatrix::from_fn(dim, dim, |i, j| g_cols[j][i]);
        let h = &mass * &g_mat;
        let mut defect = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..dim {
            for j in 0..dim {
                defect = defect.max((h[(i, j)] - h[(j, i)]).abs());
                scale = scale.max(h[(i, j)].abs());
            }
        }
        let h_sym = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
        // generalized problem H x = θ M x via the mass Cholesky factor
        let chol = nalgebra::linalg::Cholesky::new(mass)
            .expect("trace mass matrix is positive definite");
        let l = chol.l();
        let x = l
            .solve_lower_triangular(&h_sym)
            .expect("triangular solve with positive diagonal");
        let a = l
            .solve_lower_triangular(&x.transpose())
            .expect("triangular solve with positive diagonal");
        let a_sym = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
        let eigs = a_sym.symmetric_eigen().eigenvalues;
        let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let rel_defect = if scale > 0.0 { defect / scale } else { 0.0 };
        Ok(HessianReport {
            min_eig,
            eps,
            dense: true,
            symmetry_defect: Some(rel_defect),
            noisy: defect > 0.5 * min_eig.abs(),
            steps: dim,
        })
    } else {
        // Lanczos in the L²(mass) inner product with FD Hessian-vector
        // products and full reorthogonalization
        let m_inner = |a: &[f64], b: &[f64]| -> f64 {
            mass_sys.matvec(b).iter().zip(a).map(|(&mb, &av)| av * mb).sum()
        };
        let steps = 48.min(dim);
        let mut qs: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut q: Vec<f64> = vec![1.0; dim];
        let nq = m_inner(&q, &q).sqrt();
        q.iter_mut().for_each(|x| *x /= nq);
        let mut beta_prev = 0.0_f64;
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        for _ in 0..steps {
            let qmax = q.iter().fold(0.0_f64, |m, &x| m.max(x.abs())).max(1e-300);
            let h_dir = eps / qmax;
            let up: Vec<f64> =
                u_opt.values.iter().zip(&q).map(|(&u, &d)| u + h_dir * d).collect();
            let um: Vec<f64> =
                u_opt.values.iter().zip(&q).map(|(&u, &d)| u - h_dir * d).collect();
            let (gp, gmn) = (grad_at(up)?, grad_at(um)?);
            let mut w: Vec<f64> =
                gp.iter().zip(&gmn).map(|(&a, &b)| (a - b) / (2.0 * h_dir)).collect();
            let alpha = m_inner(&w, &q);
            for (wi, &qi) in w.iter_mut().zip(&q) {
                *wi -= alpha * qi;
            }
            if let Some(qp) = qs.last() {
                for (wi, &qpi) in w.iter_mut().zip(qp) {
                    *wi -= beta_prev * qpi;
                }
            }
            // full reorthogonalization keeps the small basis clean
            qs.push(q.clone());
            for prev in &qs {
                let c = m_inner(&w, prev);
                for (wi, &pi) in w.iter_mut().zip(prev) {
                    *wi -= c * pi;
                }
            }
            alphas.push(alpha);
            let beta = m_inner(&w, &w).max(0.0).sqrt();
            if beta < 1e-12 {
                break;
            }
            betas.push(beta);
            beta_prev = beta;
            q = w.into_iter().map(|x| x / beta).collect();
        }
        let k = alphas.len();
        let mut tri = DMatrix::zeros(k, k);
        for i in 0..k {
            tri[(i, i)] = alphas[i];
            if i + 1 < k {
                tri[(i, i + 1)] = betas[i];
                tri[(i + 1, i)] = betas[i];
            }
        }
        let eigs = tri.symmetric_eigen().eigenvalues;
        let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(HessianReport {
            min_eig,
            eps,
            dense: false,
            symmetry_defect: None,
            noisy: false,
            steps: k,
        })
    }
}

