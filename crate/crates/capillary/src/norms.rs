//! Discrete norms of trace and bulk fields.
//!
//! Trace norms are exact: piecewise-linear integrands integrate in closed
//! form interval by interval, including `|·|` with a sign change.  Bulk `L²`
//! and `W^{1,2}` evaluations are exact for Q1 fields under the 2×2 Gauss
//! rule; `W^{1,p}` with `p ≠ 2` is a quadrature approximation with the same
//! rule (the gradient magnitude is not polynomial), which is the documented
//! convention for the `p = 2.1` error plots.
//!
//! `W^{1,p}` and `W^{1,∞}` of bulk fields report the gradient seminorm; the
//! trace `W1inf`/`W11` kinds report value-part + slope-part compositions
//! (norm, not seminorm) since the analysis uses them on zero-trace spaces
//! where the two are equivalent.

use crate::assemble::{q1_grad, BoundaryField, BulkField, GAUSS_PTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceNorm {
    L2,
    L1,
    /// `max nodal |value| + max interval |slope|`.
    W1Inf,
    /// `∫|v| + ∫|v′|` (total variation of the piecewise linear).
    W11,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BulkNorm {
    L2,
    /// Gradient seminorm `(∫|∇v|^p)^{1/p}`.
    W1P(f64),
}

/// Exact `L²(0,1)` inner product of two piecewise linears on one partition.
pub fn trace_l2_inner(a: &BoundaryField, b: &BoundaryField) -> f64 {
    debug_assert_eq!(a.mesh.bulk_n, b.mesh.bulk_n, "fields live on different partitions");
    let h = a.mesh.h();
    let mut total = 0.0;
    for k in 0..a.mesh.bulk_n {
        let (al, ar) = (a.values[k], a.values[k + 1]);
        let (bl, br) = (b.values[k], b.values[k + 1]);
        total += h / 6.0 * (2.0 * al * bl + al * br + ar * bl + 2.0 * ar * br);
    }
    total
}

/// Exact `∫|v|` for a piecewise linear, splitting intervals at sign changes.
fn trace_l1(f: &BoundaryField) -> f64 {
    let h = f.mesh.h();
    let mut total = 0.0;
    for k in 0..f.mesh.bulk_n {
        let (a, b) = (f.values[k], f.values[k + 1]);
        if a * b >= 0.0 {
            total += 0.5 * h * (a.abs() + b.abs());
        } else {
            // two triangles on either side of the zero crossing
            total += 0.5 * h * (a * a + b * b) / (a.abs() + b.abs());
        }
    }
    total
}

pub fn norm_trace(field: &BoundaryField, kind: TraceNorm) -> f64 {
    match kind {
        TraceNorm::L2 => trace_l2_inner(field, field).max(0.0).sqrt(),
        TraceNorm::L1 => trace_l1(field),
        TraceNorm::W1Inf => {
            let vmax = field.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
            let smax = (0..field.mesh.bulk_n).map(|k| field.slope(k).abs()).fold(0.0, f64::max);
            vmax + smax
        }
        TraceNorm::W11 => {
            let tv: f64 =
                (0..field.mesh.bulk_n).map(|k| (field.values[k + 1] - field.values[k]).abs()).sum();
            trace_l1(field) + tv
        }
    }
}

pub fn norm_bulk(field: &BulkField, kind: BulkNorm) -> f64 {
    let mesh = &field.mesh;
    let n = mesh.n;
    let h = mesh.h();
    match kind {
        BulkNorm::L2 => {
            let mut total = 0.0;
            for cell in &mesh.cells {
                for &eta in &GAUSS_PTS {
                    for &xi in &GAUSS_PTS {
                        let shape = crate::assemble::q1_shape(xi, eta);
                        let val: f64 = (0..4).map(|a| field.values[cell[a]] * shape[a]).sum();
                        total += 0.25 * h * h * val * val;
                    }
                }
            }
            total.sqrt()
        }
        BulkNorm::W1P(p) => {
            assert!(p > 1.0 && p.is_finite(), "W1p needs p in (1, ∞), got {p}");
            let mut total = 0.0;
            for cy in 0..n {
                for cx in 0..n {
                    let cell = mesh.cells[cy * n + cx];
                    for &eta in &GAUSS_PTS {
                        for &xi in &GAUSS_PTS {
                            let gr = q1_grad(xi, eta);
                            let mut gx = 0.0;
                            let mut gy = 0.0;
                            for a in 0..4 {
                                gx += field.values[cell[a]] * gr[a][0];
                                gy += field.values[cell[a]] * gr[a][1];
                            }
                            // reference gradients carry a 1/h to physical scale
                            let mag = (gx * gx + gy * gy).sqrt() / h;
                            total += 0.25 * h * h * mag.powf(p);
                        }
                    }
                }
            }
            total.powf(1.0 / p)
        }
    }
}
