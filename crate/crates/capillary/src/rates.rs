//! Convergence-rate tables: errors against a fine reference solution.
//!
//! Closed forms for the coupled optimum are unavailable, so a solution on a
//! much finer nested mesh stands in for the exact one: coarse solutions are
//! prolonged level by level onto the reference mesh and the differences are
//! measured there, in the norms the error analysis uses — `W^{1,∞}` for γ,
//! `W^{1,p}` (p = 2.1) for the potential, `W^{1,1}` for the trace adjoint,
//! `W^{1,q}` (q conjugate to p) for the bulk adjoint, `L²` for the control.
//!
//! Slopes between consecutive rows are `log(e_i/e_{i+1}) / log(h_i/h_{i+1})`
//! — i.e. log₂ error ratios under halving.  Zero or negative errors make a
//! slope undefined (`None`, empty CSV cell), never fabricated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::AdjointPair;
use crate::assemble::{BoundaryField, BulkField};
use crate::mesh;
use crate::norms::{norm_bulk, norm_trace, BulkNorm, TraceNorm};
use crate::state::StatePair;

/// Default bulk-error exponent for the potential (`q = p/(p−1)` pairs with
/// the adjoint).
pub const DEFAULT_P: f64 = 2.1;

#[derive(Debug, Error, PartialEq)]
pub enum RatesError {
    #[error("coarse mesh ({coarse} cells/side) is not nested in the reference ({reference})")]
    NotNested { coarse: usize, reference: usize },
    #[error("reference mesh ({reference} cells/side) is not strictly finer than the coarse one ({coarse})")]
    NotFiner { coarse: usize, reference: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("malformed rate table at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One optimization outcome on one level, ready for error measurement.
#[derive(Debug)]
pub struct SolutionBundle {
    pub u: BoundaryField,
    pub state: StatePair,
    pub adjoint: AdjointPair,
    pub cost: f64,
}

impl SolutionBundle {
    pub fn n(&self) -> usize {
        self.state.y.mesh.n
    }

    pub fn level(&self) -> usize {
        self.state.y.mesh.level
    }

    pub fn h(&self) -> f64 {
        self.state.y.mesh.h()
    }

    /// Total solution coefficients: bulk nodes plus trace nodes.
    pub fn dofs(&self) -> usize {
        let n = self.n();
        (n + 1) * (n + 1) + (n + 1)
    }
}

/// One level's errors (and, once computed, slopes to the previous level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub level: usize,
    pub h: f64,
    pub dofs: usize,
    pub e_gamma_w1inf: f64,
    pub e_y_w1p: f64,
    pub e_s_w11: f64,
    pub e_r_w1q: f64,
    pub e_u_l2: f64,
    pub cost: f64,
    pub control_norm: f64,
    pub slope_gamma: Option<f64>,
    pub slope_y: Option<f64>,
    pub slope_s: Option<f64>,
    pub slope_r: Option<f64>,
    pub slope_u: Option<f64>,
}

impl RateRow {
    pub fn errors(&self) -> [f64; 5] {
        [self.e_gamma_w1inf, self.e_y_w1p, self.e_s_w11, self.e_r_w1q, self.e_u_l2]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateTable {
    /// Bulk-error exponent used for `e_y` (`e_r` uses the conjugate).
    pub p: f64,
    pub rows: Vec<RateRow>,
}

/// Repeatedly prolongs trace values from an `nc`-interval partition to an
/// `nr`-interval one (`nr = nc·2^k`).
fn up_trace(mut values: Vec<f64>, mut nc: usize, nr: usize) -> Vec<f64> {
    while nc < nr {
        values = mesh::prolong_trace_values(nc, &values).expect("length tracked by loop");
        nc *= 2;
    }
    values
}

fn up_bulk(mut values: Vec<f64>, mut nc: usize, nr: usize) -> Vec<f64> {
    while nc < nr {
        values = mesh::prolong_bulk_values(nc, &values).expect("length tracked by loop");
        nc *= 2;
    }
    values
}

/// Measures one coarse solution against the reference bundle; slopes are
/// left unset (fill a whole table with [`compute_slopes`]).
pub fn error_vs_reference(
    coarse: &SolutionBundle,
    reference: &SolutionBundle,
    p: f64,
) -> Result<RateRow, RatesError> {
    let (nc, nr) = (coarse.n(), reference.n());
    if nr <= nc {
        return Err(RatesError::NotFiner { coarse: nc, reference: nr });
    }
    if nr % nc != 0 || !(nr / nc).is_power_of_two() {
        return Err(RatesError::NotNested { coarse: nc, reference: nr });
    }
    let q = p / (p - 1.0);
    let ref_trace = reference.u.mesh.clone();
    let ref_bulk = reference.state.y.mesh.clone();

    let diff_trace = |coarse_vals: &[f64], ref_field: &BoundaryField| -> BoundaryField {
        let up = up_trace(coarse_vals.to_vec(), nc, nr);
        BoundaryField {
            mesh: ref_trace.clone(),
            values: up.iter().zip(&ref_field.values).map(|(a, b)| a - b).collect(),
            kind: crate::assemble::TraceKind::Free,
        }
    };
    let diff_bulk = |coarse_vals: &[f64], ref_field: &BulkField| -> BulkField {
        let up = up_bulk(coarse_vals.to_vec(), nc, nr);
        BulkField {
            mesh: ref_bulk.clone(),
            values: up.iter().zip(&ref_field.values).map(|(a, b)| a - b).collect(),
            kind: crate::assemble::BulkKind::Free,
        }
    };

    let e_gamma = norm_trace(&diff_trace(&coarse.state.g.values, &reference.state.g), TraceNorm::W1Inf);
    let e_y = norm_bulk(&diff_bulk(&coarse.state.y.values, &reference.state.y), BulkNorm::W1P(p));
    let e_s = norm_trace(&diff_trace(&coarse.adjoint.s.values, &reference.adjoint.s), TraceNorm::W11);
    let e_r = norm_bulk(&diff_bulk(&coarse.adjoint.r.values, &reference.adjoint.r), BulkNorm::W1P(q));
    let e_u = norm_trace(&diff_trace(&coarse.u.values, &reference.u), TraceNorm::L2);

    Ok(RateRow {
        level: coarse.level(),
        h: coarse.h(),
        dofs: coarse.dofs(),
        e_gamma_w1inf: e_gamma,
        e_y_w1p: e_y,
        e_s_w11: e_s,
        e_r_w1q: e_r,
        e_u_l2: e_u,
        cost: coarse.cost,
        control_norm: norm_trace(&coarse.u, TraceNorm::L2),
        slope_gamma: None,
        slope_y: None,
        slope_s: None,
        slope_r: None,
        slope_u: None,
    })
}

fn pair_slope(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> Option<f64> {
    if e_coarse > 0.0 && e_fine > 0.0 && h_coarse > h_fine {
        Some((e_coarse / e_fine).ln() / (h_coarse / h_fine).ln())
    } else {
        None
    }
}

/// Fills the slope columns from consecutive row pairs (rows must be ordered
/// coarse to fine).
pub fn compute_slopes(table: &RateTable) -> Result<RateTable, RatesError> {
    if table.rows.len() < 2 {
        return Err(RatesError::TooFewRows { needed: 2, got: table.rows.len() });
    }
    let mut out = table.clone();
    for i in 1..out.rows.len() {
        let (hc, hf) = (out.rows[i - 1].h, out.rows[i].h);
        let prev = out.rows[i - 1].errors();
        let cur = out.rows[i].errors();
        out.rows[i].slope_gamma = pair_slope(prev[0], cur[0], hc, hf);
        out.rows[i].slope_y = pair_slope(prev[1], cur[1], hc, hf);
        out.rows[i].slope_s = pair_slope(prev[2], cur[2], hc, hf);
        out.rows[i].slope_r = pair_slope(prev[3], cur[3], hc, hf);
        out.rows[i].slope_u = pair_slope(prev[4], cur[4], hc, hf);
    }
    Ok(out)
}

/// Least-squares slope of `ln e` against `ln h`; `None` with fewer than two
/// usable (positive-error) points.
pub fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(h, e)| h > 0.0 && e > 0.0)
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|&(x, _)| x).sum();
    let sy: f64 = logs.iter().map(|&(_, y)| y).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| x * x).sum();
    let sxy: f64 = logs.iter().map(|&(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

pub const CSV_HEADER: &str = "level,h,dofs,e_gamma_w1inf,e_y_w1p,e_s_w11,e_r_w1q,e_u_l2,cost,control_norm,slope_gamma,slope_y,slope_s,slope_r,slope_u";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

/// Fixed-order CSV encoding of one row (shared by the core table writer and
/// the experiment driver's config-prefixed tables).
pub fn row_to_csv(row: &RateRow) -> String {
    format!(
        "{},{:.12e},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{},{}",
        row.level,
        row.h,
        row.dofs,
        row.e_gamma_w1inf,
        row.e_y_w1p,
        row.e_s_w11,
        row.e_r_w1q,
        row.e_u_l2,
        row.cost,
        row.control_norm,
        fmt_opt(row.slope_gamma),
        fmt_opt(row.slope_y),
        fmt_opt(row.slope_s),
        fmt_opt(row.slope_r),
        fmt_opt(row.slope_u),
    )
}

/// Parses the fields of one CSV row (same fixed order).
pub fn row_from_csv(fields: &[&str], line: usize) -> Result<RateRow, RatesError> {
    if fields.len() != 15 {
        return Err(RatesError::Parse {
            line,
            reason: format!("expected 15 fields, got {}", fields.len()),
        });
    }
    let num = |idx: usize| -> Result<f64, RatesError> {
        fields[idx].trim().parse().map_err(|_| RatesError::Parse {
            line,
            reason: format!("bad number in field {idx}: {:?}", fields[idx]),
        })
    };
    let opt = |idx: usize| -> Result<Option<f64>, RatesError> {
        let t = fields[idx].trim();
        if t.is_empty() { Ok(None) } else { Ok(Some(num(idx)?)) }
    };
    Ok(RateRow {
        level: fields[0].trim().parse().map_err(|_| RatesError::Parse {
            line,
            reason: format!("bad level: {:?}", fields[0]),
        })?,
        h: num(1)?,
        dofs: fields[2].trim().parse().map_err(|_| RatesError::Parse {
            line,
            reason: format!("bad dofs: {:?}", fields[2]),
        })?,
        e_gamma_w1inf: num(3)?,
        e_y_w1p: num(4)?,
        e_s_w11: num(5)?,
        e_r_w1q: num(6)?,
        e_u_l2: num(7)?,
        cost: num(8)?,
        control_norm: num(9)?,
        slope_gamma: opt(10)?,
        slope_y: opt(11)?,
        slope_s: opt(12)?,
        slope_r: opt(13)?,
        slope_u: opt(14)?,
    })
}

impl RateTable {
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row_to_csv(row));
            out.push('\n');
        }
        out
    }

    /// Parses a table written by [`RateTable::to_csv_string`]; `p` is not
    /// stored in the CSV and must be supplied.
    pub fn from_csv_str(s: &str, p: f64) -> Result<RateTable, RatesError> {
        let mut rows = Vec::new();
        for (idx, line) in s.lines().enumerate() {
            if idx == 0 {
                if line.trim() != CSV_HEADER {
                    return Err(RatesError::Parse {
                        line: 1,
                        reason: "unexpected header".to_string(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            rows.push(row_from_csv(&fields, idx + 1)?);
        }
        Ok(RateTable { p, rows })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("rate table serializes")
    }
}
