//! Nodal fields and finite-element assembly on the structured mesh.
//!
//! Trace fields are continuous piecewise linears on the Γ partition; bulk
//! fields are continuous piecewise bilinears (Q1) on the square cells.  Both
//! store values at *all* nodes; the `kind` tag says which boundary values are
//! pinned to zero, and constructors enforce the pin.
//!
//! Assembled operators are returned as [`SparseSystem`] triplet lists over
//! the full node sets (no boundary elimination); callers restrict to free
//! rows/columns with [`SparseSystem::restrict`].  Bulk integrals use 2×2
//! Gauss quadrature per cell, which is exact for every integrand this crate
//! assembles except the γ-dependent diffusion coefficient itself; trace
//! integrals use exact interval formulas.

use std::sync::Arc;

use thiserror::Error;

use crate::coeff::{self, GeometryError};
use crate::mesh::{self, BulkMesh, MeshError, TraceMesh};

#[derive(Debug, Error, PartialEq)]
pub enum AssembleError {
    #[error("field has {got} values but the mesh has {expected} nodes")]
    FieldLength { expected: usize, got: usize },
    #[error("zero-trace field has nonzero endpoint value {value:.3e} at node {index}")]
    NonZeroTrace { index: usize, value: f64 },
    #[error("zero-boundary field has nonzero boundary value {value:.3e} at node {node}")]
    NonZeroBoundary { node: usize, value: f64 },
    #[error("trace partition with {trace_n} intervals does not match bulk mesh with {bulk_n} cells per side")]
    Incompatible { bulk_n: usize, trace_n: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Which trace values a boundary field pins to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// Endpoints pinned: member of the zero-trace space (γ, ξ, S live here).
    ZeroTrace,
    /// No pin (controls, targets).
    Free,
}

/// Which boundary values a bulk field pins to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BulkKind {
    /// All boundary nodes pinned (test/solution space of the bulk equation).
    ZeroBoundary,
    /// No pin (Dirichlet data, lifted fields, composite fields).
    Free,
}

/// Piecewise-linear field on the Γ partition.
#[derive(Debug, Clone)]
pub struct BoundaryField {
    pub mesh: Arc<TraceMesh>,
    pub values: Vec<f64>,
    pub kind: TraceKind,
}

impl BoundaryField {
    pub fn zeros(mesh: Arc<TraceMesh>, kind: TraceKind) -> Self {
        let values = vec![0.0; mesh.n_nodes()];
        BoundaryField { mesh, values, kind }
    }

    /// Nodal interpolation of `f`.  For the zero-trace kind the endpoint
    /// values are pinned to exactly zero (interpolation into the space).
    pub fn interpolate(mesh: Arc<TraceMesh>, kind: TraceKind, f: impl Fn(f64) -> f64) -> Self {
        let mut values: Vec<f64> = mesh.nodes.iter().map(|&x| f(x)).collect();
        if kind == TraceKind::ZeroTrace {
            values[0] = 0.0;
            *values.last_mut().unwrap() = 0.0;
        }
        BoundaryField { mesh, values, kind }
    }

    /// Wraps existing nodal values, validating the kind's zero pin.
    pub fn from_values(
        mesh: Arc<TraceMesh>,
        kind: TraceKind,
        values: Vec<f64>,
    ) -> Result<Self, AssembleError> {
        if values.len() != mesh.n_nodes() {
            return Err(AssembleError::FieldLength { expected: mesh.n_nodes(), got: values.len() });
        }
        if kind == TraceKind::ZeroTrace {
            for &index in &[0, values.len() - 1] {
                if values[index] != 0.0 {
                    return Err(AssembleError::NonZeroTrace { index, value: values[index] });
                }
            }
        }
        Ok(BoundaryField { mesh, values, kind })
    }

    /// Point value by linear interpolation; `x` is clamped to `[0,1]`.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.mesh.bulk_n;
        let x = x.clamp(0.0, 1.0);
        let k = ((x * n as f64) as usize).min(n - 1);
        let xi = x * n as f64 - k as f64;
        self.values[k] * (1.0 - xi) + self.values[k + 1] * xi
    }

    /// Constant slope on interval `k`.
    #[inline]
    pub fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / self.mesh.h()
    }

    /// Interpolates onto the next-finer partition.
    pub fn prolong(&self, fine: Arc<TraceMesh>) -> Result<Self, AssembleError> {
        if fine.bulk_n != 2 * self.mesh.bulk_n {
            return Err(MeshError::NotNested { coarse: self.mesh.bulk_n, got: fine.bulk_n }.into());
        }
        let values = mesh::prolong_trace_values(self.mesh.bulk_n, &self.values)?;
        Ok(BoundaryField { mesh: fine, values, kind: self.kind })
    }
}

/// Piecewise-bilinear (Q1) field on the bulk mesh.
#[derive(Debug, Clone)]
pub struct BulkField {
    pub mesh: Arc<BulkMesh>,
    pub values: Vec<f64>,
    pub kind: BulkKind,
}

impl BulkField {
    pub fn zeros(mesh: Arc<BulkMesh>, kind: BulkKind) -> Self {
        let values = vec![0.0; mesh.n_nodes()];
        BulkField { mesh, values, kind }
    }

    /// Nodal interpolation of `f(x₁, x₂)`.  For the zero-boundary kind all
    /// boundary values are pinned to exactly zero.
    pub fn interpolate(
        mesh: Arc<BulkMesh>,
        kind: BulkKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let n = mesh.n;
        let mut values = Vec::with_capacity(mesh.n_nodes());
        for iy in 0..=n {
            for ix in 0..=n {
                let on_boundary = ix == 0 || ix == n || iy == 0 || iy == n;
                if kind == BulkKind::ZeroBoundary && on_boundary {
                    values.push(0.0);
                } else {
                    let (x1, x2) = mesh.coords[mesh.node_index(ix, iy)];
                    values.push(f(x1, x2));
                }
            }
        }
        BulkField { mesh, values, kind }
    }

    /// Wraps existing nodal values, validating the kind's zero pin.
    pub fn from_values(
        mesh: Arc<BulkMesh>,
        kind: BulkKind,
        values: Vec<f64>,
    ) -> Result<Self, AssembleError> {
        if values.len() != mesh.n_nodes() {
            return Err(AssembleError::FieldLength { expected: mesh.n_nodes(), got: values.len() });
        }
        if kind == BulkKind::ZeroBoundary {
            let n = mesh.n;
            for (node, &v) in values.iter().enumerate() {
                let (ix, iy) = mesh.node_grid(node);
                if (ix == 0 || ix == n || iy == 0 || iy == n) && v != 0.0 {
                    return Err(AssembleError::NonZeroBoundary { node, value: v });
                }
            }
        }
        Ok(BulkField { mesh, values, kind })
    }

    /// Point value by bilinear interpolation; coordinates clamped to `[0,1]`.
    pub fn value_at(&self, x1: f64, x2: f64) -> f64 {
        let n = self.mesh.n;
        let (x1, x2) = (x1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0));
        let cx = ((x1 * n as f64) as usize).min(n - 1);
        let cy = ((x2 * n as f64) as usize).min(n - 1);
        let xi = x1 * n as f64 - cx as f64;
        let eta = x2 * n as f64 - cy as f64;
        let cell = self.mesh.cells[cy * n + cx];
        let shape = q1_shape(xi, eta);
        (0..4).map(|a| self.values[cell[a]] * shape[a]).sum()
    }

    /// Interpolates onto the next-finer mesh.
    pub fn prolong(&self, fine: Arc<BulkMesh>) -> Result<Self, AssembleError> {
        if fine.n != 2 * self.mesh.n {
            return Err(MeshError::NotNested { coarse: self.mesh.n, got: fine.n }.into());
        }
        let values = mesh::prolong_bulk_values(self.mesh.n, &self.values)?;
        Ok(BulkField { mesh: fine, values, kind: self.kind })
    }
}

/// Sparse matrix in triplet (COO) form; duplicate entries accumulate.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub nrows: usize,
    pub ncols: usize,
    /// Set by assemblers that produce numerically symmetric entries by
    /// construction (mirrored local contributions); the factorization uses
    /// it to try Cholesky first.
    pub symmetric: bool,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseSystem {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseSystem { nrows, ncols, symmetric: false, triplets: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        SparseSystem { nrows, ncols, symmetric: false, triplets: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.triplets.push((row, col, value));
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    /// `y = A·x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for &(i, j, v) in &self.triplets {
            y[i] += v * x[j];
        }
        y
    }

    /// `y = Aᵀ·x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for &(i, j, v) in &self.triplets {
            y[j] += v * x[i];
        }
        y
    }

    /// Dense copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for &(i, j, v) in &self.triplets {
            dense[i][j] += v;
        }
        dense
    }

    /// Submatrix on the given (strictly increasing) row/column index lists.
    pub fn restrict(&self, keep_rows: &[usize], keep_cols: &[usize]) -> SparseSystem {
        let mut row_map = vec![usize::MAX; self.nrows];
        for (new, &old) in keep_rows.iter().enumerate() {
            row_map[old] = new;
        }
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in keep_cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut out = SparseSystem::with_capacity(keep_rows.len(), keep_cols.len(), self.nnz());
        for &(i, j, v) in &self.triplets {
            let (ri, cj) = (row_map[i], col_map[j]);
            if ri != usize::MAX && cj != usize::MAX {
                out.triplets.push((ri, cj, v));
            }
        }
        out.symmetric = self.symmetric && keep_rows == keep_cols;
        out
    }
}

// --- quadrature and Q1 reference tables ---------------------------------

/// 2-point Gauss abscissae on [0,1]: ½ ∓ 1/(2√3); each weight is ½.
pub(crate) const GAUSS_PTS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Q1 shape values at reference coordinates, corner order [bl, br, tr, tl].
#[inline]
pub(crate) fn q1_shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

/// Q1 reference gradients (∂/∂ξ, ∂/∂η) at reference coordinates; physical
/// gradients are these divided by `h`.
#[inline]
pub(crate) fn q1_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}

fn check_compatible(bulk: &BulkMesh, trace: &TraceMesh) -> Result<(), AssembleError> {
    if trace.bulk_n != bulk.n {
        return Err(AssembleError::Incompatible { bulk_n: bulk.n, trace_n: trace.bulk_n });
    }
    Ok(())
}

// --- trace-line operators ------------------------------------------------

/// Weighted stiffness of the trace line: entries `κ ∫ Φ_k′ Φ_j′`.
/// All partition nodes are kept; zero-trace solves restrict away the
/// endpoint rows/columns.
pub fn assemble_b_gamma(trace: &TraceMesh, kappa: f64) -> SparseSystem {
    let m = trace.n_nodes();
    let h = trace.h();
    let k_loc = kappa / h;
    let mut sys = SparseSystem::with_capacity(m, m, 4 * (m - 1));
    for e in 0..m - 1 {
        sys.push(e, e, k_loc);
        sys.push(e + 1, e + 1, k_loc);
        sys.push(e, e + 1, -k_loc);
        sys.push(e + 1, e, -k_loc);
    }
    sys.symmetric = true;
    sys
}

/// Mass matrix of the trace line: entries `∫ Φ_k Φ_j` (exact).
pub fn assemble_mass_1d(trace: &TraceMesh) -> SparseSystem {
    let m = trace.n_nodes();
    let h = trace.h();
    let (d, o) = (h / 3.0, h / 6.0);
    let mut sys = SparseSystem::with_capacity(m, m, 4 * (m - 1));
    for e in 0..m - 1 {
        sys.push(e, e, d);
        sys.push(e + 1, e + 1, d);
        sys.push(e, e + 1, o);
        sys.push(e + 1, e, o);
    }
    sys.symmetric = true;
    sys
}

// --- bulk operators -------------------------------------------------------

/// Diffusion matrix `∫_Ω A[γ]∇Φ_b·∇Φ_a` over all bulk nodes.
///
/// γ is sampled per quadrature point from the trace field `g`; the local
/// matrix is computed for `b ≤ a` and mirrored, so the assembled matrix is
/// numerically symmetric by construction.  Fails if the geometry has
/// collapsed (`1+γ ≤ 1e−8`) anywhere.
pub fn assemble_b_omega(mesh: &BulkMesh, g: &BoundaryField) -> Result<SparseSystem, AssembleError> {
    check_compatible(mesh, &g.mesh)?;
    let n = mesh.n;
    let h = mesh.h();
    let mut sys = SparseSystem::with_capacity(mesh.n_nodes(), mesh.n_nodes(), 16 * n * n);
    sys.symmetric = true;

    // reference tables at the four Gauss points
    let qpoints: Vec<(f64, f64)> = GAUSS_PTS
        .iter()
        .flat_map(|&eta| GAUSS_PTS.iter().map(move |&xi| (xi, eta)))
        .collect();
    let grads: Vec<[[f64; 2]; 4]> = qpoints.iter().map(|&(xi, eta)| q1_grad(xi, eta)).collect();

    for cy in 0..n {
        for cx in 0..n {
            let cell = mesh.cells[cy * n + cx];
            let (g_l, g_r) = (g.values[cx], g.values[cx + 1]);
            let dg = (g_r - g_l) / h;
            let mut local = [[0.0_f64; 4]; 4];
            for (q, &(xi, eta)) in qpoints.iter().enumerate() {
                let gamma = g_l * (1.0 - xi) + g_r * xi;
                let x2 = (cy as f64 + eta) * h;
                let a = coeff::eval_a(gamma, dg, x2)?;
                let gr = &grads[q];
                // physical 1/h² from the two gradients cancels the h² cell
                // measure; 0.25 is the tensor Gauss weight
                for bi in 0..4 {
                    let ag = [
                        a[0][0] * gr[bi][0] + a[0][1] * gr[bi][1],
                        a[1][0] * gr[bi][0] + a[1][1] * gr[bi][1],
                    ];
                    for ai in bi..4 {
                        local[ai][bi] += 0.25 * (ag[0] * gr[ai][0] + ag[1] * gr[ai][1]);
                    }
                }
            }
            for bi in 0..4 {
                for ai in bi..4 {
                    sys.push(cell[ai], cell[bi], local[ai][bi]);
                    if ai != bi {
                        sys.push(cell[bi], cell[ai], local[ai][bi]);
                    }
                }
            }
        }
    }
    Ok(sys)
}

/// Newton coupling blocks: derivatives of `∫ A[γ]∇W·∇Φ_a` with respect to
/// the trace values of γ, split into the value part (`A₁`, first block) and
/// the slope part (`A₂`, second block).
///
/// Entry `(a, k)` of the first block is `∫ (A₁ Φ_k) ∇W·∇Φ_a`; of the second,
/// `∫ (A₂ Φ_k′) ∇W·∇Φ_a`.  Rows run over all bulk nodes, columns over all
/// trace nodes.
pub fn assemble_coupling_blocks(
    mesh: &BulkMesh,
    g: &BoundaryField,
    w: &BulkField,
) -> Result<(SparseSystem, SparseSystem), AssembleError> {
    check_compatible(mesh, &g.mesh)?;
    if w.mesh.n != mesh.n {
        return Err(AssembleError::Incompatible { bulk_n: mesh.n, trace_n: w.mesh.n });
    }
    let n = mesh.n;
    let h = mesh.h();
    let n_trace = n + 1;
    let mut c1 = SparseSystem::with_capacity(mesh.n_nodes(), n_trace, 8 * n * n);
    let mut c2 = SparseSystem::with_capacity(mesh.n_nodes(), n_trace, 8 * n * n);

    let qpoints: Vec<(f64, f64)> = GAUSS_PTS
        .iter()
        .flat_map(|&eta| GAUSS_PTS.iter().map(move |&xi| (xi, eta)))
        .collect();
    let grads: Vec<[[f64; 2]; 4]> = qpoints.iter().map(|&(xi, eta)| q1_grad(xi, eta)).collect();

    for cy in 0..n {
        for cx in 0..n {
            let cell = mesh.cells[cy * n + cx];
            let (g_l, g_r) = (g.values[cx], g.values[cx + 1]);
            let dg = (g_r - g_l) / h;
            let wv = [w.values[cell[0]], w.values[cell[1]], w.values[cell[2]], w.values[cell[3]]];
            // local blocks: rows = 4 cell corners, cols = 2 trace hats (cx, cx+1)
            let mut l1 = [[0.0_f64; 2]; 4];
            let mut l2 = [[0.0_f64; 2]; 4];
            for (q, &(xi, eta)) in qpoints.iter().enumerate() {
                let gamma = g_l * (1.0 - xi) + g_r * xi;
                let x2 = (cy as f64 + eta) * h;
                let s = coeff::eval_coeff(gamma, dg, x2)?;
                let gr = &grads[q];
                let gw = [
                    (0..4).map(|c| wv[c] * gr[c][0]).sum::<f64>(),
                    (0..4).map(|c| wv[c] * gr[c][1]).sum::<f64>(),
                ];
                let a1w = [s.a1[0][0] * gw[0] + s.a1[0][1] * gw[1], s.a1[1][0] * gw[0] + s.a1[1][1] * gw[1]];
                let a2w = [s.a2[0][0] * gw[0] + s.a2[0][1] * gw[1], s.a2[1][0] * gw[0] + s.a2[1][1] * gw[1]];
                // hat values / slopes of the two trace basis functions alive
                // on this cell column
                let phi = [1.0 - xi, xi];
                let dphi = [-1.0 / h, 1.0 / h];
                for ai in 0..4 {
                    let d1 = a1w[0] * gr[ai][0] + a1w[1] * gr[ai][1];
                    let d2 = a2w[0] * gr[ai][0] + a2w[1] * gr[ai][1];
                    for (kc, (&p, &dp)) in phi.iter().zip(dphi.iter()).enumerate() {
                        l1[ai][kc] += 0.25 * p * d1;
                        l2[ai][kc] += 0.25 * dp * d2;
                    }
                }
            }
            for ai in 0..4 {
                for kc in 0..2 {
                    c1.push(cell[ai], cx + kc, l1[ai][kc]);
                    c2.push(cell[ai], cx + kc, l2[ai][kc]);
                }
            }
        }
    }
    Ok((c1, c2))
}

/// Lift of a zero-trace field `ξ` into the bulk: `(E ξ)(x₁, x₂) = ξ(x₁)·x₂`,
/// which is exactly representable in Q1 on the matching mesh (linear in each
/// variable per cell).  The result vanishes on Σ and equals ξ on Γ.
pub fn lift_boundary(xi: &BoundaryField, mesh: &Arc<BulkMesh>) -> Result<BulkField, AssembleError> {
    check_compatible(mesh, &xi.mesh)?;
    if xi.kind != TraceKind::ZeroTrace {
        let index = if xi.values[0] != 0.0 { 0 } else { xi.values.len() - 1 };
        return Err(AssembleError::NonZeroTrace { index, value: xi.values[index] });
    }
    let n = mesh.n;
    let mut values = Vec::with_capacity(mesh.n_nodes());
    for iy in 0..=n {
        let x2 = iy as f64 / n as f64;
        for ix in 0..=n {
            values.push(xi.values[ix] * x2);
        }
    }
    Ok(BulkField { mesh: mesh.clone(), values, kind: BulkKind::Free })
}
