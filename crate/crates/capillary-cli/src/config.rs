//! Experiment configuration: the flat key = value config format, built-in
//! problem data for the three benchmark examples, and the mapping from a
//! parsed spec to per-level solver inputs.
//!
//! Config files are plain text, one `key = value` pair per line, `#` starts
//! a comment.  Unknown keys are rejected rather than ignored so a typo can't
//! silently fall back to a default.  The same `key = value` machinery backs
//! the command-line overrides, so flags and file entries accept identical
//! syntax.

use std::path::PathBuf;
use std::sync::Arc;

use capillary::assemble::{BoundaryField, BulkField, BulkKind, TraceKind};
use capillary::control::{ControlConfig, ControlError, ProblemData};
use capillary::mesh::{build_bulk_mesh, build_trace_mesh, TraceMesh};
use thiserror::Error;

/// Hard cap on refinement levels: level 7 is a 256×256 grid (~66k unknowns),
/// the finest the direct solvers handle comfortably.
pub const MAX_LEVEL: usize = 7;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    NotKeyValue { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue { line: usize, key: String, value: String, reason: String },
    #[error("invalid spec: {name} = {value}")]
    InvalidField { name: &'static str, value: String },
    #[error("unknown example id {0} (valid: 1, 2, 3)")]
    UnknownExample(u32),
    #[error("bad sample file, line {line}: {reason}")]
    BadSample { line: usize, reason: String },
}

/// Desired-profile source: the example's built-in formula or a sampled file
/// (two columns `x value`, interpolated piecewise-linearly onto each mesh).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Builtin,
    File(PathBuf),
}

/// Dirichlet datum on the fixed boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatumSpec {
    /// `v = x₂(1−x₂)(1−2x₁)`, the benchmark datum.
    Builtin,
    Zero,
}

/// One experiment: a (λ, level) grid for a fixed example configuration.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Benchmark id: 1 (trig target, ball-constrained), 2 (trig target,
    /// unconstrained), 3 (inverted-hat target, unconstrained).
    pub example: u32,
    pub gamma_d: TargetSpec,
    pub v: DatumSpec,
    pub kappa: f64,
    pub mu: f64,
    /// λ sweep; may be empty (the run is then a no-op with an empty table).
    pub lambdas: Vec<f64>,
    /// Admissible-ball radius; `f64::INFINITY` disables the constraint.
    pub radius: f64,
    pub levels: Vec<usize>,
    /// Reference level; `None` means finest level + 3, capped at [`MAX_LEVEL`].
    pub ref_level: Option<usize>,
    pub out_dir: PathBuf,
    /// Seed for the randomized invariant checks.
    pub seed: u64,
    /// Depth of the example-3 inverted-hat target.
    pub hat_depth: f64,
    /// Write state/control snapshot files per cell.
    pub snapshots: bool,
    /// Compute the smallest reduced-Hessian eigenvalue per cell (costly).
    pub hessian: bool,
    /// Rayon worker threads for the linear algebra.
    pub workers: usize,
    pub grad_tol: f64,
    pub newton_tol: f64,
    pub max_opt_iter: usize,
}

impl ExperimentSpec {
    /// Defaults for one benchmark example: the full λ sweep 1e0 … 1e−6,
    /// levels 1–3, and the example's admissible radius (0.9 for example 1,
    /// unconstrained otherwise).
    pub fn for_example(example: u32) -> Result<Self, ConfigError> {
        let radius = match example {
            1 => 0.9,
            2 | 3 => f64::INFINITY,
            other => return Err(ConfigError::UnknownExample(other)),
        };
        Ok(ExperimentSpec {
            example,
            gamma_d: TargetSpec::Builtin,
            v: DatumSpec::Builtin,
            kappa: 1.0,
            mu: 0.0,
            lambdas: (0..=6).map(|k| 10f64.powi(-k)).collect(),
            radius,
            levels: vec![1, 2, 3],
            ref_level: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            hat_depth: 0.2,
            snapshots: false,
            hessian: false,
            workers: 1,
            grad_tol: 1e-9,
            newton_tol: 1e-11,
            max_opt_iter: 5000,
        })
    }

    /// Reference level actually used: the configured one, or finest + 3
    /// capped at [`MAX_LEVEL`].
    pub fn reference_level(&self) -> usize {
        self.ref_level.unwrap_or_else(|| {
            let finest = self.levels.iter().copied().max().unwrap_or(0);
            (finest + 3).min(MAX_LEVEL)
        })
    }

    /// Solver configuration for one λ of the sweep.
    pub fn control_config(&self, lambda: f64) -> ControlConfig {
        ControlConfig {
            mu: self.mu,
            kappa: self.kappa,
            radius: self.radius,
            grad_tol: self.grad_tol,
            max_opt_iter: self.max_opt_iter,
            newton_tol: self.newton_tol,
            ..ControlConfig::new(lambda)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=3).contains(&self.example) {
            return Err(ConfigError::UnknownExample(self.example));
        }
        for &l in &self.lambdas {
            if !l.is_finite() || l <= 0.0 {
                return Err(ConfigError::InvalidField { name: "lambda", value: l.to_string() });
            }
        }
        let reference = self.reference_level();
        for &lv in &self.levels {
            if lv >= reference {
                return Err(ConfigError::InvalidField {
                    name: "levels",
                    value: format!("{lv} (must be below the reference level {reference})"),
                });
            }
        }
        if reference > MAX_LEVEL {
            return Err(ConfigError::InvalidField {
                name: "ref_level",
                value: reference.to_string(),
            });
        }
        for (name, value, want_positive) in [
            ("kappa", self.kappa, true),
            ("mu", self.mu, false),
            ("radius", self.radius, true),
            ("hat_depth", self.hat_depth, true),
            ("grad_tol", self.grad_tol, true),
            ("newton_tol", self.newton_tol, true),
        ] {
            let ok = if want_positive { value > 0.0 } else { value >= 0.0 && value.is_finite() };
            if !ok {
                return Err(ConfigError::InvalidField { name, value: value.to_string() });
            }
        }
        if self.workers == 0 {
            return Err(ConfigError::InvalidField { name: "workers", value: "0".into() });
        }
        Ok(())
    }
}

/// Parses a whole config file.  The `example` key is applied first (it seeds
/// the per-example defaults), then the remaining keys in file order.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let pairs = split_pairs(text)?;
    let example = match pairs.iter().find(|(_, k, _)| k == "example") {
        Some((line, key, value)) => parse_num::<u32>(*line, key, value)?,
        None => 1,
    };
    let mut spec = ExperimentSpec::for_example(example)?;
    for (line, key, value) in &pairs {
        if key != "example" {
            apply_key(&mut spec, *line, key, value)?;
        }
    }
    Ok(spec)
}

/// Splits config text into `(line, key, value)` triples, rejecting malformed
/// lines and duplicate keys.
fn split_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::NotKeyValue { line, text: content.to_string() });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.iter().any(|(_, k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { line, key });
        }
        pairs.push((line, key, value));
    }
    Ok(pairs)
}

/// Applies one `key = value` pair to a spec (shared by the file parser and
/// the command-line overrides; `line` is 0 for flag-sourced pairs).
pub fn apply_key(
    spec: &mut ExperimentSpec,
    line: usize,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    match key {
        "example" => {
            // re-seed the example-dependent defaults, keeping everything else
            let example = parse_num::<u32>(line, key, value)?;
            let fresh = ExperimentSpec::for_example(example)?;
            spec.example = fresh.example;
            spec.radius = fresh.radius;
        }
        "gamma_d" => {
            spec.gamma_d = if value == "builtin" {
                TargetSpec::Builtin
            } else if let Some(path) = value.strip_prefix("file:") {
                TargetSpec::File(PathBuf::from(path.trim()))
            } else {
                return Err(bad(line, key, value, "expected `builtin` or `file:<path>`"));
            };
        }
        "v" => {
            spec.v = match value {
                "builtin" => DatumSpec::Builtin,
                "zero" => DatumSpec::Zero,
                _ => return Err(bad(line, key, value, "expected `builtin` or `zero`")),
            };
        }
        "kappa" => spec.kappa = parse_num(line, key, value)?,
        "mu" => spec.mu = parse_num(line, key, value)?,
        "lambda" => spec.lambdas = parse_list(line, key, value)?,
        "radius" => {
            spec.radius = if value == "inf" {
                f64::INFINITY
            } else {
                parse_num(line, key, value)?
            };
        }
        "levels" => spec.levels = parse_list(line, key, value)?,
        "ref_level" => spec.ref_level = Some(parse_num(line, key, value)?),
        "out_dir" => spec.out_dir = PathBuf::from(value),
        "seed" => spec.seed = parse_num(line, key, value)?,
        "hat_depth" => spec.hat_depth = parse_num(line, key, value)?,
        "snapshots" => spec.snapshots = parse_bool(line, key, value)?,
        "hessian" => spec.hessian = parse_bool(line, key, value)?,
        "workers" => spec.workers = parse_num(line, key, value)?,
        "grad_tol" => spec.grad_tol = parse_num(line, key, value)?,
        "newton_tol" => spec.newton_tol = parse_num(line, key, value)?,
        "max_opt_iter" => spec.max_opt_iter = parse_num(line, key, value)?,
        _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
    }
    Ok(())
}

fn bad(line: usize, key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| bad(line, key, value, "not a valid number"))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line, key, value, "expected `true` or `false`")),
    }
}

fn parse_list<T: std::str::FromStr>(
    line: usize,
    key: &str,
    value: &str,
) -> Result<Vec<T>, ConfigError> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| bad(line, key, s, "not a valid list entry")))
        .collect()
}

/// Trigonometric desired profile of examples 1 and 2:
/// `sin(2πx)/16π − sin(4πx)/16π + sin(6πx)/32π`.
pub fn gamma_d_trig(x: f64) -> f64 {
    use std::f64::consts::PI;
    ((2.0 * PI * x).sin() - (4.0 * PI * x).sin()) / (16.0 * PI)
        + (6.0 * PI * x).sin() / (32.0 * PI)
}

/// Example-3 inverted-hat profile: zero at the endpoints, −depth at x = ½.
pub fn gamma_d_hat(depth: f64, x: f64) -> f64 {
    -depth * (1.0 - (2.0 * x - 1.0).abs())
}

/// Built-in desired profile for one example, interpolated onto the trace.
pub fn builtin_gamma_d(
    example: u32,
    hat_depth: f64,
    trace: Arc<TraceMesh>,
) -> Result<BoundaryField, ConfigError> {
    match example {
        1 | 2 => Ok(BoundaryField::interpolate(trace, TraceKind::Free, gamma_d_trig)),
        3 => Ok(BoundaryField::interpolate(trace, TraceKind::Free, |x| {
            gamma_d_hat(hat_depth, x)
        })),
        other => Err(ConfigError::UnknownExample(other)),
    }
}

/// Desired profile from sampled text: lines of `x value`, `#` comments,
/// strictly increasing x spanning [0, 1]; evaluated at the trace nodes by
/// piecewise-linear interpolation.
pub fn gamma_d_from_samples(
    text: &str,
    trace: Arc<TraceMesh>,
) -> Result<BoundaryField, ConfigError> {
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut it = content.split_whitespace();
        let (Some(xs), Some(vs), None) = (it.next(), it.next(), it.next()) else {
            return Err(ConfigError::BadSample {
                line,
                reason: format!("expected two columns, got `{content}`"),
            });
        };
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| ConfigError::BadSample {
                line,
                reason: format!("`{s}` is not a number"),
            })
        };
        let x = parse(xs)?;
        let v = parse(vs)?;
        if let Some(&(prev, _)) = samples.last() {
            if x <= prev {
                return Err(ConfigError::BadSample {
                    line,
                    reason: format!("x = {x} does not increase past {prev}"),
                });
            }
        }
        samples.push((x, v));
    }
    if samples.len() < 2 {
        return Err(ConfigError::BadSample { line: 0, reason: "need at least two samples".into() });
    }
    let eps = 1e-12;
    if samples[0].0.abs() > eps || (samples.last().unwrap().0 - 1.0).abs() > eps {
        return Err(ConfigError::BadSample {
            line: 0,
            reason: format!(
                "samples must span [0, 1], got [{}, {}]",
                samples[0].0,
                samples.last().unwrap().0
            ),
        });
    }
    Ok(BoundaryField::interpolate(trace, TraceKind::Free, |x| {
        // first interval whose right endpoint reaches x (x is in [0, 1])
        let j = samples.partition_point(|&(sx, _)| sx < x).clamp(1, samples.len() - 1);
        let (x0, v0) = samples[j - 1];
        let (x1, v1) = samples[j];
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }))
}

/// Benchmark Dirichlet datum `v = x₂(1−x₂)(1−2x₁)`.
pub fn datum_v(x1: f64, x2: f64) -> f64 {
    x2 * (1.0 - x2) * (1.0 - 2.0 * x1)
}

/// Assembles the fixed problem data of one mesh level.  The desired bulk
/// potential is zero: the μ-term, when enabled, penalizes the weighted
/// potential itself.
pub fn problem_data(spec: &ExperimentSpec, level: usize) -> Result<ProblemData, DataError> {
    let bulk = build_bulk_mesh(level);
    let trace = build_trace_mesh(&bulk);
    let gamma_d = match &spec.gamma_d {
        TargetSpec::Builtin => builtin_gamma_d(spec.example, spec.hat_depth, trace.clone())?,
        TargetSpec::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| DataError::Io { path: path.clone(), source: e })?;
            gamma_d_from_samples(&text, trace.clone())?
        }
    };
    let v = match spec.v {
        DatumSpec::Builtin => BulkField::interpolate(bulk.clone(), BulkKind::Free, datum_v),
        DatumSpec::Zero => BulkField::zeros(bulk.clone(), BulkKind::Free),
    };
    let y_d = BulkField::zeros(bulk.clone(), BulkKind::Free);
    Ok(ProblemData::new(bulk, trace, v, gamma_d, y_d)?)
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Human-readable radius for file names and tables (`inf` or the number).
pub fn radius_label(radius: f64) -> String {
    if radius.is_finite() {
        format!("{radius}")
    } else {
        "inf".to_string()
    }
}
