//! Experiment layer over the `capillary` solvers: configuration parsing,
//! the benchmark problem data, the (λ, level) sweep driver with its on-disk
//! artifacts, field snapshots, and a runtime invariant suite.  The `capillary`
//! binary in this crate is a thin command-line front end over these modules.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod snapshot;
