//! Exactness checks for the discrete norms: closed-form values for fields
//! inside the piecewise-linear / bilinear spaces, including absolute-value
//! integration across sign changes.

use capillary::assemble::{BoundaryField, BulkField, BulkKind, TraceKind};
use capillary::mesh::{build_bulk_mesh, build_trace_mesh};
use capillary::norms::{norm_bulk, norm_trace, trace_l2_inner, BulkNorm, TraceNorm};

const TOL: f64 = 1e-14;

#[test]
fn identity_trace_field_has_closed_form_norms() {
    let bulk = build_bulk_mesh(2);
    let trace = build_trace_mesh(&bulk);
    let g = BoundaryField::interpolate(trace, TraceKind::Free, |x| x);
    // ‖x‖_L2 = 1/√3, ‖x‖_L1 = 1/2
    assert!((norm_trace(&g, TraceNorm::L2) - 1.0 / 3.0_f64.sqrt()).abs() < TOL);
    assert!((norm_trace(&g, TraceNorm::L1) - 0.5).abs() < TOL);
    // slope is identically 1: max|value| + max|slope| = 2
    assert!((norm_trace(&g, TraceNorm::W1Inf) - 2.0).abs() < TOL);
    // ∫|x| + ∫|x′| = 1/2 + 1
    assert!((norm_trace(&g, TraceNorm::W11) - 1.5).abs() < TOL);
}

#[test]
fn hat_function_slope_part_scales_with_mesh_width() {
    for level in 0..3 {
        let bulk = build_bulk_mesh(level);
        let trace = build_trace_mesh(&bulk);
        let h = trace.h();
        let mut vals = vec![0.0; trace.n_nodes()];
        vals[1] = 1.0;
        let hat = BoundaryField::from_values(trace, TraceKind::ZeroTrace, vals).unwrap();
        // value part 1, slope part 1/h
        let w1inf = norm_trace(&hat, TraceNorm::W1Inf);
        assert!(
            (w1inf - (1.0 + 1.0 / h)).abs() < TOL,
            "level {level}: W1∞ = {w1inf}, want {}",
            1.0 + 1.0 / h
        );
        // triangle area h, total variation 2
        assert!((norm_trace(&hat, TraceNorm::W11) - (h + 2.0)).abs() < TOL);
        assert!((norm_trace(&hat, TraceNorm::L1) - h).abs() < TOL);
    }
}

#[test]
fn zero_fields_have_zero_norms() {
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let g = BoundaryField::zeros(trace, TraceKind::Free);
    for kind in [TraceNorm::L2, TraceNorm::L1, TraceNorm::W1Inf, TraceNorm::W11] {
        assert_eq!(norm_trace(&g, kind), 0.0, "{kind:?}");
    }
    let y = BulkField::zeros(mesh, BulkKind::Free);
    assert_eq!(norm_bulk(&y, BulkNorm::L2), 0.0);
    assert_eq!(norm_bulk(&y, BulkNorm::W1P(2.1)), 0.0);
}

#[test]
fn absolute_value_integration_splits_at_interior_sign_changes() {
    // x − 1/3 crosses zero inside an interval on every study mesh;
    // ∫₀¹ |x − 1/3| = 5/18 exactly
    let bulk = build_bulk_mesh(1);
    let trace = build_trace_mesh(&bulk);
    let g = BoundaryField::interpolate(trace, TraceKind::Free, |x| x - 1.0 / 3.0);
    assert!((norm_trace(&g, TraceNorm::L1) - 5.0 / 18.0).abs() < TOL);
    // total variation of a monotone function is the endpoint gap
    assert!((norm_trace(&g, TraceNorm::W11) - (5.0 / 18.0 + 1.0)).abs() < TOL);
}

#[test]
fn linear_bulk_fields_have_unit_gradient_for_every_p() {
    let mesh = build_bulk_mesh(1);
    let y = BulkField::interpolate(mesh, BulkKind::Free, |x1, _| x1);
    for p in [1.5, 2.0, 2.1, 3.0, 10.0] {
        let norm = norm_bulk(&y, BulkNorm::W1P(p));
        assert!((norm - 1.0).abs() < TOL, "p = {p}: seminorm {norm}, want 1");
    }
    assert!((norm_bulk(&y, BulkNorm::L2) - 1.0 / 3.0_f64.sqrt()).abs() < TOL);
}

#[test]
fn diagonal_bulk_field_has_sqrt_two_gradient() {
    let mesh = build_bulk_mesh(2);
    let y = BulkField::interpolate(mesh, BulkKind::Free, |x1, x2| x1 + x2);
    assert!((norm_bulk(&y, BulkNorm::W1P(2.0)) - 2.0_f64.sqrt()).abs() < TOL);
}

#[test]
fn bilinear_bulk_field_norms_are_quadrature_exact() {
    // x₁·x₂ is in the Q1 space; the 2×2 Gauss rule integrates its square and
    // its gradient square exactly
    let mesh = build_bulk_mesh(2);
    let y = BulkField::interpolate(mesh, BulkKind::Free, |x1, x2| x1 * x2);
    assert!((norm_bulk(&y, BulkNorm::L2) - 1.0 / 3.0).abs() < TOL);
    // |∇(x₁x₂)|² = x₂² + x₁², integral 2/3
    assert!((norm_bulk(&y, BulkNorm::W1P(2.0)) - (2.0 / 3.0_f64).sqrt()).abs() < TOL);
}

#[test]
fn trace_inner_product_is_exact_for_linears() {
    let bulk = build_bulk_mesh(2);
    let trace = build_trace_mesh(&bulk);
    let one = BoundaryField::interpolate(trace.clone(), TraceKind::Free, |_| 1.0);
    let x = BoundaryField::interpolate(trace, TraceKind::Free, |x| x);
    assert!((trace_l2_inner(&one, &x) - 0.5).abs() < TOL);
    assert!((trace_l2_inner(&x, &x) - 1.0 / 3.0).abs() < TOL);
    assert!((trace_l2_inner(&one, &one) - 1.0).abs() < TOL);
    // symmetry of the bilinear form
    assert_eq!(trace_l2_inner(&one, &x), trace_l2_inner(&x, &one));
}

#[test]
#[should_panic(expected = "W1p needs p in (1, ∞)")]
fn out_of_range_exponent_is_rejected() {
    let mesh = build_bulk_mesh(0);
    let y = BulkField::zeros(mesh, BulkKind::Free);
    norm_bulk(&y, BulkNorm::W1P(1.0));
}
