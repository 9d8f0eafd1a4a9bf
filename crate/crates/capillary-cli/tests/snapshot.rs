//! Snapshot encoding: round trips, zero payloads, and byte stability.

use std::path::Path;

use capillary::assemble::{BoundaryField, BulkField, BulkKind, TraceKind};
use capillary::mesh::{build_bulk_mesh, build_trace_mesh};
use capillary_cli::snapshot::{
    bulk_snapshot_text, emit_field_snapshot, parse_bulk_snapshot, parse_trace_snapshot,
    trace_snapshot_text, SnapshotError,
};

#[test]
fn zero_fields_produce_all_zero_payloads_of_correct_length() {
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let bulk = BulkField::zeros(mesh.clone(), BulkKind::Free);
    let gamma = BoundaryField::zeros(trace.clone(), TraceKind::Free);

    let (n, values) = parse_bulk_snapshot(&bulk_snapshot_text(&bulk), Path::new("mem")).unwrap();
    assert_eq!(n, mesh.n);
    assert_eq!(values.len(), mesh.n_nodes());
    assert!(values.iter().all(|&v| v == 0.0));

    let pairs = parse_trace_snapshot(&trace_snapshot_text(&gamma), Path::new("mem")).unwrap();
    assert_eq!(pairs.len(), trace.n_nodes());
    assert!(pairs.iter().all(|&(_, v)| v == 0.0));
}

#[test]
fn snapshot_round_trip_is_exact() {
    let mesh = build_bulk_mesh(2);
    let trace = build_trace_mesh(&mesh);
    // irrational-ish values exercise the full mantissa
    let bulk = BulkField::interpolate(mesh.clone(), BulkKind::Free, |x1, x2| {
        (31.0 * x1 + 17.0 * x2).sin() / 3.0
    });
    let gamma = BoundaryField::interpolate(trace, TraceKind::Free, |x| (47.0 * x).cos() / 7.0);

    let (n, values) = parse_bulk_snapshot(&bulk_snapshot_text(&bulk), Path::new("mem")).unwrap();
    assert_eq!(n, mesh.n);
    // row-major bottom-first matches the mesh numbering exactly
    assert_eq!(values, bulk.values, "bulk values must round-trip bitwise");

    let pairs = parse_trace_snapshot(&trace_snapshot_text(&gamma), Path::new("mem")).unwrap();
    let (xs, vs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    assert_eq!(vs, gamma.values, "trace values must round-trip bitwise");
    assert_eq!(xs, gamma.mesh.nodes);
}

#[test]
fn identical_fields_snapshot_to_identical_bytes() {
    let mesh = build_bulk_mesh(1);
    let field = BulkField::interpolate(mesh, BulkKind::Free, |x1, x2| x1 * x2 - 0.3);
    assert_eq!(bulk_snapshot_text(&field), bulk_snapshot_text(&field.clone()));
}

#[test]
fn emit_writes_grid_and_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = build_bulk_mesh(1);
    let trace = build_trace_mesh(&mesh);
    let bulk = BulkField::interpolate(mesh, BulkKind::Free, |x1, x2| x1 + x2);
    let gamma = BoundaryField::interpolate(trace, TraceKind::Free, |x| x);

    let paths = emit_field_snapshot(&bulk, &gamma, &dir.path().join("state_l1")).unwrap();
    assert!(paths.grid.ends_with("state_l1_grid.txt"));
    assert!(paths.trace.ends_with("state_l1_trace.txt"));
    let grid_text = std::fs::read_to_string(&paths.grid).unwrap();
    let (_, values) = parse_bulk_snapshot(&grid_text, &paths.grid).unwrap();
    assert_eq!(values, bulk.values);
}

#[test]
fn malformed_snapshots_are_rejected_with_location() {
    let p = Path::new("mem");
    assert!(matches!(
        parse_bulk_snapshot("", p),
        Err(SnapshotError::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_bulk_snapshot("m 2\n0 0 0\n", p),
        Err(SnapshotError::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_bulk_snapshot("n 1\n0 0\n0 oops\n", p),
        Err(SnapshotError::Parse { line: 3, .. })
    ));
    // count mismatch against the header
    assert!(matches!(
        parse_bulk_snapshot("n 1\n0 0\n", p),
        Err(SnapshotError::Parse { .. })
    ));
    assert!(matches!(
        parse_trace_snapshot("0 0\n0.5\n", p),
        Err(SnapshotError::Parse { line: 2, .. })
    ));
}
