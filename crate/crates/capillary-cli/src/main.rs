//! Command-line driver for the free-boundary control experiments.
//!
//! `capillary run [config] [overrides]` runs a (λ, level) grid and writes
//! tables, plot data, and optional snapshots; `capillary rates <csv>`
//! recomputes slope columns from a stored table; `capillary check` runs the
//! runtime invariant suite.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use capillary_cli::checks::run_invariant_checks;
use capillary_cli::config::{apply_key, parse_config, ExperimentSpec};
use capillary_cli::experiment::{read_file, recompute_rates, run_experiment};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capillary", about = "Free-boundary optimal-control experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a (λ, level) experiment grid and write its artifacts.
    Run {
        /// Config file (`key = value` lines); flags override its entries.
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Box<Overrides>,
    },
    /// Recompute the slope columns of a stored rate_table.csv.
    Rates {
        /// Table written by a previous `run`.
        table: PathBuf,
        /// Write here instead of printing to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite (algebraic identities, duality, gradients).
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flag-level overrides for the most common spec fields.  Values use the
/// config-file syntax (`--lambda "1e-2,1e-3"`, `--radius inf`).
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    example: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    ref_level: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    snapshots: Option<String>,
    #[arg(long)]
    hessian: Option<String>,
}

impl Overrides {
    /// `(key, value)` pairs in config syntax, in a fixed application order.
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        [
            ("example", &self.example),
            ("lambda", &self.lambda),
            ("levels", &self.levels),
            ("radius", &self.radius),
            ("mu", &self.mu),
            ("kappa", &self.kappa),
            ("out_dir", &self.out),
            ("seed", &self.seed),
            ("ref_level", &self.ref_level),
            ("workers", &self.workers),
            ("snapshots", &self.snapshots),
            ("hessian", &self.hessian),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, overrides } => run(config, &overrides),
        Command::Rates { table, out } => rates(&table, out.as_deref()),
        Command::Check { seed } => check(seed),
    }
}

fn run(config: Option<PathBuf>, overrides: &Overrides) -> Result<()> {
    let mut spec = match &config {
        Some(path) => {
            let text = read_file(path).context("reading the config file")?;
            parse_config(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentSpec::for_example(1)?,
    };
    for (key, value) in overrides.pairs() {
        apply_key(&mut spec, 0, key, value)
            .with_context(|| format!("applying override --{}", key.replace('_', "-")))?;
    }

    let outcome = run_experiment(&spec)?;
    for cell in &outcome.cells {
        println!(
            "lambda {:.3e}  level {}  J = {:.6e}  |u| = {:.6e}  ({} iterations)",
            cell.lambda, cell.level, cell.cost, cell.control_norm, cell.optimizer_iterations
        );
    }
    for failure in &outcome.failures {
        eprintln!(
            "FAILED lambda {:.3e} level {} ({}): {}",
            failure.lambda, failure.level, failure.stage, failure.error
        );
    }
    println!("wrote {} files under {}", outcome.files.len(), outcome.out_dir.display());
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        bail!("{} grid cell(s) failed", outcome.failures.len());
    }
}

fn rates(table: &std::path::Path, out: Option<&std::path::Path>) -> Result<()> {
    let text = read_file(table).context("reading the rate table")?;
    let recomputed = recompute_rates(&text)?;
    match out {
        Some(path) => std::fs::write(path, recomputed)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{recomputed}"),
    }
    Ok(())
}

fn check(seed: u64) -> Result<()> {
    let outcomes = run_invariant_checks(seed);
    let mut failed = 0;
    for c in &outcomes {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag}  {:<18} {}", c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        bail!("{failed} invariant check(s) failed");
    }
    Ok(())
}
