//! Experiment driver: runs the (λ, level) grid of one spec and writes the
//! artifacts.
//!
//! The grid is processed as warm-start chains — λ descending, and within
//! each λ levels ascending with the previous optimum prolonged as the next
//! start — ending in the per-λ reference solve used to measure errors.  The
//! chains make the run sequential and deterministic; the configured worker
//! count parallelizes the linear algebra inside each solve instead.
//!
//! Artifacts in the output directory:
//! - `rate_table.csv` — every (λ, level) cell with errors and slopes,
//!   prefixed by the λ and radius that produced it;
//! - `summary.json` — spec echo plus per-cell results and failures;
//! - `plot_lam*.csv` — per-λ `dofs vs error` data for log-log plots;
//! - optional `state_*/control_*` snapshots (see [`crate::snapshot`]).
//!
//! A solver failure in one cell is recorded and the remaining cells run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use capillary::assemble::{AssembleError, BoundaryField, BulkField, TraceKind};
use capillary::control::{optimize_from, ControlError, Optimized, ProblemData};
use capillary::mesh::prolong_trace_values;
use capillary::norms::{norm_trace, TraceNorm};
use capillary::rates::{
    self, RateRow, RateTable, RatesError, SolutionBundle, CSV_HEADER, DEFAULT_P,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{problem_data, radius_label, ConfigError, DataError, ExperimentSpec};
use crate::snapshot::{emit_field_snapshot, emit_trace_snapshot, write_text, SnapshotError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Rates(#[from] RatesError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serializing summary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// One solved cell of the grid, as it appears in `summary.json`.  Error and
/// slope columns are absent when the λ's reference solve failed.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub lambda: f64,
    pub level: usize,
    pub radius: String,
    pub h: f64,
    pub dofs: usize,
    pub cost: f64,
    pub control_norm: f64,
    pub optimizer_iterations: usize,
    pub grad_map_norm: f64,
    /// Max trace slope |γ′| at the optimum and whether it stays within the
    /// unit bound assumed by the continuous model.
    pub max_slope: f64,
    pub slope_feasible: bool,
    pub hessian_min_eig: Option<f64>,
    pub e_gamma_w1inf: Option<f64>,
    pub e_y_w1p: Option<f64>,
    pub e_s_w11: Option<f64>,
    pub e_r_w1q: Option<f64>,
    pub e_u_l2: Option<f64>,
    pub slope_gamma: Option<f64>,
    pub slope_y: Option<f64>,
    pub slope_s: Option<f64>,
    pub slope_r: Option<f64>,
    pub slope_u: Option<f64>,
}

/// A cell (or auxiliary solve) that failed; the run continues without it.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub lambda: f64,
    pub level: usize,
    pub stage: String,
    pub error: String,
}

#[derive(Serialize)]
struct SpecEcho {
    example: u32,
    gamma_d: String,
    v: String,
    kappa: f64,
    mu: f64,
    lambda: Vec<f64>,
    radius: String,
    levels: Vec<usize>,
    reference_level: usize,
    seed: u64,
    hat_depth: f64,
    grad_tol: f64,
    newton_tol: f64,
    max_opt_iter: usize,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    spec: SpecEcho,
    /// Bulk-norm exponent behind the `e_y_w1p` column (`e_r` uses the dual).
    p: f64,
    q: f64,
    cells: &'a [CellSummary],
    failures: &'a [CellFailure],
}

/// Everything a run produced, for callers that inspect results in-process.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    /// Per-λ rate tables over the experiment levels, slopes filled.
    pub tables: Vec<(f64, RateTable)>,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<CellFailure>,
    pub files: Vec<PathBuf>,
}

/// Runs the whole grid and writes the artifacts.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, CliError> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir)
        .map_err(|source| CliError::Io { path: spec.out_dir.clone(), source })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.workers).build()?;
    pool.install(|| run_grid(spec))
}

fn run_grid(spec: &ExperimentSpec) -> Result<ExperimentOutcome, CliError> {
    let mut levels = spec.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let mut lambdas = spec.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();
    let reference = spec.reference_level();

    // chain through every level between the finest cell and the reference so
    // the expensive reference solve starts from a well-converged prolongation
    let chain: Vec<usize> = match levels.last() {
        Some(&finest) => levels.iter().copied().chain(finest + 1..=reference).collect(),
        None => Vec::new(),
    };

    let mut data_cache: BTreeMap<usize, ProblemData> = BTreeMap::new();
    let mut cells: Vec<CellSummary> = Vec::new();
    let mut failures: Vec<CellFailure> = Vec::new();
    let mut tables: Vec<(f64, RateTable)> = Vec::new();
    let mut files: Vec<PathBuf> = Vec::new();
    // coarsest-level optimum of the previous λ, the next chain's warm start
    let mut chain_seed: Option<BoundaryField> = None;

    for &lambda in &lambdas {
        let cfg = spec.control_config(lambda);
        let mut bundles: Vec<(usize, SolutionBundle)> = Vec::new();
        let mut reference_bundle: Option<SolutionBundle> = None;
        let mut prev: Option<BoundaryField> = chain_seed.take();

        for &level in &chain {
            let data = match level_data(spec, level, &mut data_cache) {
                Ok(d) => d,
                Err(e) => {
                    failures.push(fail(lambda, level, "data", &e));
                    prev = None;
                    continue;
                }
            };
            let u0 = match warm_start(prev.as_ref(), data) {
                Ok(u0) => u0,
                Err(e) => {
                    failures.push(fail(lambda, level, "warm start", &e));
                    BoundaryField::zeros(data.trace.clone(), TraceKind::Free)
                }
            };
            let opt = match optimize_from(&u0, &cfg, data) {
                Ok(opt) => opt,
                Err(e) => {
                    failures.push(fail(lambda, level, "optimize", &e));
                    prev = None;
                    continue;
                }
            };
            prev = Some(opt.u.clone());
            if level == *chain.first().expect("chain is nonempty here") {
                chain_seed = Some(opt.u.clone());
            }

            if levels.contains(&level) {
                let mut cell = summarize_cell(spec, lambda, level, &opt);
                if spec.hessian {
                    match capillary::control::hessian_min_eig(&opt.u, &cfg, data) {
                        Ok(eig) => cell.hessian_min_eig = Some(eig),
                        Err(e) => failures.push(fail(lambda, level, "hessian", &e)),
                    }
                }
                if spec.snapshots {
                    match write_snapshots(spec, lambda, level, &opt, data) {
                        Ok(mut paths) => files.append(&mut paths),
                        Err(e) => failures.push(fail(lambda, level, "snapshot", &e)),
                    }
                }
                cells.push(cell);
                bundles.push((level, bundle(opt)));
            } else if level == reference {
                reference_bundle = Some(bundle(opt));
            }
        }

        // measure each cell against the reference and fill the slopes
        if let Some(reference_bundle) = &reference_bundle {
            let mut rows: Vec<RateRow> = Vec::new();
            for (level, coarse) in &bundles {
                match rates::error_vs_reference(coarse, reference_bundle, DEFAULT_P) {
                    Ok(row) => rows.push(row),
                    Err(e) => failures.push(fail(lambda, *level, "errors", &e)),
                }
            }
            let raw = RateTable { p: DEFAULT_P, rows };
            let table = if raw.rows.len() >= 2 {
                match rates::compute_slopes(&raw) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        failures.push(fail(lambda, reference, "slopes", &e));
                        None
                    }
                }
            } else if raw.rows.is_empty() {
                None
            } else {
                // a single level has errors but no slope to fit
                Some(raw)
            };
            if let Some(table) = table {
                attach_errors(&mut cells, lambda, &table);
                tables.push((lambda, table));
            }
        }
    }

    files.extend(write_rate_table(spec, &tables)?);
    files.extend(write_plot_files(spec, &tables)?);
    files.push(write_summary(spec, &cells, &failures)?);
    Ok(ExperimentOutcome { out_dir: spec.out_dir.clone(), tables, cells, failures, files })
}

fn fail(lambda: f64, level: usize, stage: &str, error: &dyn std::fmt::Display) -> CellFailure {
    CellFailure { lambda, level, stage: stage.to_string(), error: error.to_string() }
}

fn level_data<'a>(
    spec: &ExperimentSpec,
    level: usize,
    cache: &'a mut BTreeMap<usize, ProblemData>,
) -> Result<&'a ProblemData, DataError> {
    if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(level) {
        e.insert(problem_data(spec, level)?);
    }
    Ok(&cache[&level])
}

/// Prolongs the previous optimum onto the target mesh (possibly through
/// several nested refinements); `None` starts from zero.
fn warm_start(
    prev: Option<&BoundaryField>,
    data: &ProblemData,
) -> Result<BoundaryField, ControlError> {
    let Some(prev) = prev else {
        return Ok(BoundaryField::zeros(data.trace.clone(), TraceKind::Free));
    };
    let mut n = prev.mesh.bulk_n;
    let mut values = prev.values.clone();
    while n < data.trace.bulk_n {
        values = prolong_trace_values(n, &values).map_err(AssembleError::from)?;
        n *= 2;
    }
    Ok(BoundaryField::from_values(data.trace.clone(), TraceKind::Free, values)?)
}

fn bundle(opt: Optimized) -> SolutionBundle {
    SolutionBundle { u: opt.u, state: opt.state, adjoint: opt.adjoint, cost: opt.cost }
}

fn summarize_cell(
    spec: &ExperimentSpec,
    lambda: f64,
    level: usize,
    opt: &Optimized,
) -> CellSummary {
    let h = opt.u.mesh.h();
    let n = opt.u.mesh.bulk_n;
    CellSummary {
        lambda,
        level,
        radius: radius_label(spec.radius),
        h,
        dofs: (n - 1) * (n - 1) + (n - 1),
        cost: opt.cost,
        control_norm: norm_trace(&opt.u, TraceNorm::L2),
        optimizer_iterations: opt.trace.records.len().saturating_sub(1),
        grad_map_norm: opt.trace.final_grad_map,
        max_slope: opt.state_report.max_slope,
        slope_feasible: opt.state_report.slope_feasible,
        hessian_min_eig: None,
        e_gamma_w1inf: None,
        e_y_w1p: None,
        e_s_w11: None,
        e_r_w1q: None,
        e_u_l2: None,
        slope_gamma: None,
        slope_y: None,
        slope_s: None,
        slope_r: None,
        slope_u: None,
    }
}

/// Copies a λ's finished rate rows into the matching summary cells.
fn attach_errors(cells: &mut [CellSummary], lambda: f64, table: &RateTable) {
    for row in &table.rows {
        let Some(cell) =
            cells.iter_mut().find(|c| c.lambda == lambda && c.level == row.level)
        else {
            continue;
        };
        cell.e_gamma_w1inf = Some(row.e_gamma_w1inf);
        cell.e_y_w1p = Some(row.e_y_w1p);
        cell.e_s_w11 = Some(row.e_s_w11);
        cell.e_r_w1q = Some(row.e_r_w1q);
        cell.e_u_l2 = Some(row.e_u_l2);
        cell.slope_gamma = row.slope_gamma;
        cell.slope_y = row.slope_y;
        cell.slope_s = row.slope_s;
        cell.slope_r = row.slope_r;
        cell.slope_u = row.slope_u;
    }
}

/// Physical potential `w = y + v` for plotting (the state's bulk unknown is
/// the homogeneous part).
fn potential(opt: &Optimized, data: &ProblemData) -> Result<BulkField, AssembleError> {
    let values = opt
        .state
        .y
        .values
        .iter()
        .zip(&data.v.values)
        .map(|(&a, &b)| a + b)
        .collect();
    BulkField::from_values(data.bulk.clone(), capillary::assemble::BulkKind::Free, values)
}

fn write_snapshots(
    spec: &ExperimentSpec,
    lambda: f64,
    level: usize,
    opt: &Optimized,
    data: &ProblemData,
) -> Result<Vec<PathBuf>, CliError> {
    let tag = format!("lam{lambda:e}_lev{level}");
    let w = potential(opt, data)?;
    let paths = emit_field_snapshot(&w, &opt.state.g, &spec.out_dir.join(format!("state_{tag}")))?;
    let control = spec.out_dir.join(format!("control_{tag}.txt"));
    emit_trace_snapshot(&opt.u, &control)?;
    Ok(vec![paths.grid, paths.trace, control])
}

/// `rate_table.csv` header: λ and radius prefix, then the core rate columns.
pub fn table_header() -> String {
    format!("lambda,radius,{CSV_HEADER}")
}

fn write_rate_table(
    spec: &ExperimentSpec,
    tables: &[(f64, RateTable)],
) -> Result<Vec<PathBuf>, CliError> {
    let mut text = table_header();
    text.push('\n');
    for (lambda, table) in tables {
        for row in &table.rows {
            text.push_str(&format!(
                "{lambda:.12e},{},{}\n",
                radius_label(spec.radius),
                rates::row_to_csv(row)
            ));
        }
    }
    let path = spec.out_dir.join("rate_table.csv");
    write_text(&path, &text)?;
    Ok(vec![path])
}

fn write_plot_files(
    spec: &ExperimentSpec,
    tables: &[(f64, RateTable)],
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for (lambda, table) in tables {
        let mut text = String::from("dofs,h,e_gamma_w1inf,e_y_w1p,e_s_w11,e_r_w1q,e_u_l2\n");
        for row in &table.rows {
            text.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                row.dofs, row.h, row.e_gamma_w1inf, row.e_y_w1p, row.e_s_w11, row.e_r_w1q,
                row.e_u_l2
            ));
        }
        let path = spec.out_dir.join(format!("plot_lam{lambda:e}.csv"));
        write_text(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

fn write_summary(
    spec: &ExperimentSpec,
    cells: &[CellSummary],
    failures: &[CellFailure],
) -> Result<PathBuf, CliError> {
    let echo = SpecEcho {
        example: spec.example,
        gamma_d: match &spec.gamma_d {
            crate::config::TargetSpec::Builtin => "builtin".to_string(),
            crate::config::TargetSpec::File(p) => format!("file:{}", p.display()),
        },
        v: match spec.v {
            crate::config::DatumSpec::Builtin => "builtin".to_string(),
            crate::config::DatumSpec::Zero => "zero".to_string(),
        },
        kappa: spec.kappa,
        mu: spec.mu,
        lambda: spec.lambdas.clone(),
        radius: radius_label(spec.radius),
        levels: spec.levels.clone(),
        reference_level: spec.reference_level(),
        seed: spec.seed,
        hat_depth: spec.hat_depth,
        grad_tol: spec.grad_tol,
        newton_tol: spec.newton_tol,
        max_opt_iter: spec.max_opt_iter,
    };
    let doc = SummaryDoc { spec: echo, p: DEFAULT_P, q: DEFAULT_P / (DEFAULT_P - 1.0), cells, failures };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    let path = spec.out_dir.join("summary.json");
    write_text(&path, &text)?;
    Ok(path)
}

/// Re-derives the slope columns of a stored `rate_table.csv` from its error
/// columns (rows grouped by λ in file order).
pub fn recompute_rates(text: &str) -> Result<String, CliError> {
    let expected = table_header();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == expected => {}
        _ => {
            return Err(RatesError::Parse {
                line: 1,
                reason: format!("expected header `{expected}`"),
            }
            .into())
        }
    }

    // group consecutive rows sharing a λ prefix
    let mut groups: Vec<(String, String, Vec<RateRow>)> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 17 {
            return Err(RatesError::Parse {
                line,
                reason: format!("expected 17 fields, got {}", fields.len()),
            }
            .into());
        }
        let row = rates::row_from_csv(&fields[2..], line)?;
        let key = (fields[0].to_string(), fields[1].to_string());
        match groups.last_mut() {
            Some((l, r, rows)) if *l == key.0 && *r == key.1 => rows.push(row),
            _ => groups.push((key.0, key.1, vec![row])),
        }
    }

    let mut out = expected;
    out.push('\n');
    for (lambda, radius, rows) in groups {
        let raw = RateTable { p: DEFAULT_P, rows };
        let table =
            if raw.rows.len() >= 2 { rates::compute_slopes(&raw)? } else { raw };
        for row in &table.rows {
            out.push_str(&format!("{lambda},{radius},{}\n", rates::row_to_csv(row)));
        }
    }
    Ok(out)
}

/// Reads a file into a string with path context.
pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
