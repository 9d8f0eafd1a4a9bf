//! Plot-ready field snapshots.
//!
//! A snapshot of a (trace, bulk) pair is two plain-text files: a structured
//! grid file (`header "n <n>"`, then the nodal values row-major, bottom row
//! first) and a two-column trace profile (`x value` per node).  Values are
//! written with 17 fractional digits, which round-trips every finite f64
//! exactly, so snapshots of identical fields are byte-identical.

use std::io::Write;
use std::path::{Path, PathBuf};

use capillary::assemble::{BoundaryField, BulkField};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

/// Paths written by [`emit_field_snapshot`].
#[derive(Debug, Clone)]
pub struct SnapshotPaths {
    pub grid: PathBuf,
    pub trace: PathBuf,
}

/// Structured-grid encoding of a bulk field.
pub fn bulk_snapshot_text(field: &BulkField) -> String {
    let n = field.mesh.n;
    let mut out = String::new();
    out.push_str(&format!("n {n}\n"));
    for iy in 0..=n {
        let mut sep = "";
        for ix in 0..=n {
            let v = field.values[field.mesh.node_index(ix, iy)];
            out.push_str(sep);
            out.push_str(&format!("{v:.17e}"));
            sep = " ";
        }
        out.push('\n');
    }
    out
}

/// Two-column `x value` encoding of a trace field.
pub fn trace_snapshot_text(field: &BoundaryField) -> String {
    let mut out = String::new();
    for (x, v) in field.mesh.nodes.iter().zip(&field.values) {
        out.push_str(&format!("{x:.17e} {v:.17e}\n"));
    }
    out
}

/// Parses [`bulk_snapshot_text`] output back into `(n, row-major values)`.
pub fn parse_bulk_snapshot(text: &str, path: &Path) -> Result<(usize, Vec<f64>), SnapshotError> {
    let parse_err = |line: usize, reason: String| SnapshotError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(parse_err(1, "empty file".into()));
    };
    let n: usize = header
        .strip_prefix("n ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(1, format!("expected `n <size>`, got `{header}`")))?;
    let mut values = Vec::with_capacity((n + 1) * (n + 1));
    for (idx, row) in lines {
        let line = idx + 1;
        for tok in row.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line, format!("`{tok}` is not a number")))?;
            values.push(v);
        }
    }
    if values.len() != (n + 1) * (n + 1) {
        return Err(parse_err(
            0,
            format!("expected {} values for n = {n}, found {}", (n + 1) * (n + 1), values.len()),
        ));
    }
    Ok((n, values))
}

/// Parses [`trace_snapshot_text`] output back into `(x, value)` pairs.
pub fn parse_trace_snapshot(text: &str, path: &Path) -> Result<Vec<(f64, f64)>, SnapshotError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let parse_err = |reason: String| SnapshotError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut it = raw.split_whitespace();
        let (Some(xs), Some(vs), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(format!("expected two columns, got `{raw}`")));
        };
        let x: f64 = xs.parse().map_err(|_| parse_err(format!("`{xs}` is not a number")))?;
        let v: f64 = vs.parse().map_err(|_| parse_err(format!("`{vs}` is not a number")))?;
        pairs.push((x, v));
    }
    Ok(pairs)
}

/// Writes `<stem>_grid.txt` and `<stem>_trace.txt` for a field pair.
pub fn emit_field_snapshot(
    bulk: &BulkField,
    trace: &BoundaryField,
    stem: &Path,
) -> Result<SnapshotPaths, SnapshotError> {
    let with_suffix = |suffix: &str| {
        let mut name = stem.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(suffix);
        stem.with_file_name(name)
    };
    let paths = SnapshotPaths { grid: with_suffix("_grid.txt"), trace: with_suffix("_trace.txt") };
    write_text(&paths.grid, &bulk_snapshot_text(bulk))?;
    write_text(&paths.trace, &trace_snapshot_text(trace))?;
    Ok(paths)
}

/// Writes a lone trace profile (used for controls, which have no bulk part).
pub fn emit_trace_snapshot(trace: &BoundaryField, path: &Path) -> Result<(), SnapshotError> {
    write_text(path, &trace_snapshot_text(trace))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), SnapshotError> {
    let io_err = |source| SnapshotError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(text.as_bytes()).map_err(io_err)
}
