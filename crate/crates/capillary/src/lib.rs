//! Finite-element solvers for optimal control of a capillary free boundary.
//!
//! The model problem lives on the unit square `Ω = (0,1)²` after flattening:
//! the unknown free boundary is the graph of a function `1 + γ(x₁)` over the
//! top edge `Γ = (0,1) × {1}`, and the bulk potential is pulled back onto the
//! fixed square, which turns the Laplacian into a diffusion operator with the
//! γ-dependent coefficient matrix `A[γ]` (see [`coeff`]).  The sides and
//! bottom `Σ` carry an inhomogeneous Dirichlet datum `v`; a boundary control
//! `u` on Γ forces the surface-tension equation for γ.
//!
//! The crate is organised as a pipeline:
//!
//! * [`mesh`] — structured quadrilateral meshes of the square, the matching
//!   partition of Γ, and nodal prolongation between refinement levels,
//! * [`coeff`] — the coefficient matrix `A[γ]` and its directional
//!   derivative,
//! * [`assemble`] — nodal fields, sparse triplet systems, and the bilinear
//!   forms (trace stiffness/mass, bulk diffusion, Newton coupling blocks),
//! * [`linsolve`] — direct factorization (dense, banded, bordered) with
//!   residual-checked solves, plain and transposed,
//! * [`state`] — the coupled nonlinear state system, solved by damped Newton
//!   or by a Picard splitting,
//! * [`adjoint`] — the adjoint (transposed-Jacobian) system and the reduced
//!   gradient data,
//! * [`control`] — reduced cost/gradient, projection onto the control ball,
//!   the projected-gradient optimizer, and optimality diagnostics,
//! * [`norms`], [`rates`] — discrete norms, errors against a fine reference
//!   solution, and convergence-rate tables.
//!
//! Conventions used throughout: bulk nodes are ordered lexicographically by
//! `(x₂, x₁)` so the Γ nodes form the final contiguous block; a trace field
//! carries values at *all* partition nodes including the pinned endpoints;
//! quadrature is 2×2 Gauss on cells and exact formulas on intervals.

pub mod adjoint;
pub mod assemble;
pub mod coeff;
pub mod control;
pub mod linsolve;
pub mod mesh;
pub mod norms;
pub mod rates;
pub mod state;
