//! Structured meshes of the unit square and of its top edge.
//!
//! The bulk mesh is a uniform `n × n` grid of square cells; the trace mesh is
//! the matching partition of the top edge `Γ` into `n` intervals.  Refinement
//! is uniform bisection, so level `ℓ` has `n = n_base · 2^ℓ` cells per side
//! and consecutive levels are nested.
//!
//! Node numbering is lexicographic by `(x₂, x₁)`: node `(ix, iy)` has index
//! `iy·(n+1) + ix`.  The Γ nodes (`iy = n`) are therefore the final
//! contiguous block, which the coupled solvers rely on.  Cells are numbered
//! the same way and store their corner nodes counter-clockwise as
//! `[bottom-left, bottom-right, top-right, top-left]`.

use std::sync::Arc;

use thiserror::Error;

/// Default number of cells per side on level 0.
pub const DEFAULT_BASE_CELLS: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeshError {
    #[error("field has {got} values but the mesh has {expected} nodes")]
    FieldLength { expected: usize, got: usize },
    #[error("mesh with {got} cells per side is not a refinement step from {coarse}")]
    NotNested { coarse: usize, got: usize },
}

/// Classification of a bulk node by the boundary piece it lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeMarker {
    /// Strictly inside the square.
    Interior,
    /// On the bottom edge or one of the side edges (Dirichlet datum `v`).
    Sigma,
    /// On the open top edge `Γ` (free-boundary trace), corners excluded.
    Gamma,
}

/// Uniform quadrilateral mesh of `Ω = (0,1)²`.
#[derive(Debug)]
pub struct BulkMesh {
    /// Cells per side.
    pub n: usize,
    /// Refinement level this mesh was built at.
    pub level: usize,
    /// Node coordinates `(x₁, x₂)`, lexicographic by `(x₂, x₁)`.
    pub coords: Vec<(f64, f64)>,
    /// Corner node ids per cell: `[bl, br, tr, tl]`.
    pub cells: Vec<[usize; 4]>,
    /// Boundary classification per node.
    pub markers: Vec<NodeMarker>,
}

impl BulkMesh {
    /// Mesh width `h = 1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn n_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    /// Number of interior (non-Dirichlet, non-Γ) nodes.
    pub fn n_interior(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    /// Node id of grid position `(ix, iy)`.
    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.n + 1) + ix
    }

    /// Grid position `(ix, iy)` of a node id.
    #[inline]
    pub fn node_grid(&self, id: usize) -> (usize, usize) {
        (id % (self.n + 1), id / (self.n + 1))
    }

    /// Interior node ids in lexicographic order.
    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.n;
        (1..n).flat_map(move |iy| (1..n).map(move |ix| iy * (n + 1) + ix))
    }
}

/// Partition of the top edge `Γ`, matching a [`BulkMesh`].
#[derive(Debug)]
pub struct TraceMesh {
    /// Partition points `ζ_0 < … < ζ_{n}` in `[0,1]`.
    pub nodes: Vec<f64>,
    /// Bulk node id sitting above each partition point (on Γ).
    pub parent: Vec<usize>,
    /// Cells per side of the generating bulk mesh.
    pub bulk_n: usize,
}

impl TraceMesh {
    /// Interval width `h = 1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.bulk_n as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of interior partition points (endpoints are pinned).
    pub fn n_interior(&self) -> usize {
        self.nodes.len() - 2
    }
}

/// Builds the level-`levels` bulk mesh with the default base resolution.
pub fn build_bulk_mesh(levels: usize) -> Arc<BulkMesh> {
    build_bulk_mesh_with_base(DEFAULT_BASE_CELLS, levels)
}

/// Builds a bulk mesh with `n_base · 2^levels` cells per side.
pub fn build_bulk_mesh_with_base(n_base: usize, levels: usize) -> Arc<BulkMesh> {
    assert!(n_base >= 2, "need at least 2 cells per side to have interior nodes");
    let n = n_base << levels;
    let h = 1.0 / n as f64;

    let mut coords = Vec::with_capacity((n + 1) * (n + 1));
    let mut markers = Vec::with_capacity((n + 1) * (n + 1));
    for iy in 0..=n {
        for ix in 0..=n {
            coords.push((ix as f64 * h, iy as f64 * h));
            // top corners belong to the closure of both edges; they are pinned
            // by the trace space, so they count as Σ here
            let marker = if iy == n && ix > 0 && ix < n {
                NodeMarker::Gamma
            } else if iy == 0 || iy == n || ix == 0 || ix == n {
                NodeMarker::Sigma
            } else {
                NodeMarker::Interior
            };
            markers.push(marker);
        }
    }

    let mut cells = Vec::with_capacity(n * n);
    for cy in 0..n {
        for cx in 0..n {
            let bl = cy * (n + 1) + cx;
            cells.push([bl, bl + 1, bl + n + 2, bl + n + 1]);
        }
    }

    Arc::new(BulkMesh { n, level: levels, coords, cells, markers })
}

/// Builds the trace partition matching `mesh`.
pub fn build_trace_mesh(mesh: &BulkMesh) -> Arc<TraceMesh> {
    let n = mesh.n;
    let nodes = (0..=n).map(|i| i as f64 / n as f64).collect();
    let parent = (0..=n).map(|ix| mesh.node_index(ix, n)).collect();
    Arc::new(TraceMesh { nodes, parent, bulk_n: n })
}

/// Prolongs nodal values from the `nc`-cell bulk mesh to the `2nc`-cell one
/// (bilinear interpolation, exact on the coarse space).
pub fn prolong_bulk_values(nc: usize, values: &[f64]) -> Result<Vec<f64>, MeshError> {
    let expected = (nc + 1) * (nc + 1);
    if values.len() != expected {
        return Err(MeshError::FieldLength { expected, got: values.len() });
    }
    let nf = 2 * nc;
    let c = |ix: usize, iy: usize| values[iy * (nc + 1) + ix];
    let mut fine = vec![0.0; (nf + 1) * (nf + 1)];
    for iy in 0..=nf {
        for ix in 0..=nf {
            let (cx, cy) = (ix / 2, iy / 2);
            let v = match (ix % 2, iy % 2) {
                (0, 0) => c(cx, cy),
                (1, 0) => 0.5 * (c(cx, cy) + c(cx + 1, cy)),
                (0, 1) => 0.5 * (c(cx, cy) + c(cx, cy + 1)),
                _ => 0.25 * (c(cx, cy) + c(cx + 1, cy) + c(cx, cy + 1) + c(cx + 1, cy + 1)),
            };
            fine[iy * (nf + 1) + ix] = v;
        }
    }
    Ok(fine)
}

/// Prolongs nodal values from the `nc`-interval trace partition to the
/// `2nc`-interval one (linear interpolation at the inserted midpoints).
pub fn prolong_trace_values(nc: usize, values: &[f64]) -> Result<Vec<f64>, MeshError> {
    if values.len() != nc + 1 {
        return Err(MeshError::FieldLength { expected: nc + 1, got: values.len() });
    }
    let mut fine = vec![0.0; 2 * nc + 1];
    for i in 0..=nc {
        fine[2 * i] = values[i];
        if i < nc {
            fine[2 * i + 1] = 0.5 * (values[i] + values[i + 1]);
        }
    }
    Ok(fine)
}
