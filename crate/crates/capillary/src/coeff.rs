//! Coefficient matrix of the flattened bulk equation.
//!
//! Pulling the Laplacian back from the physical domain
//! `{(x₁, x₂·(1+γ(x₁)))}` onto the unit square produces the diffusion
//! coefficient
//!
//! ```text
//! A[γ](x) = [ 1+γ            −γ′·x₂              ]
//!           [ −γ′·x₂   (1 + (γ′·x₂)²) / (1+γ)    ]
//! ```
//!
//! where γ and γ′ are evaluated at `x₁`.  `A` is symmetric with
//! `det A[γ] = 1`, hence uniformly positive definite as long as the film
//! thickness `1+γ` stays positive.  Its directional derivative at γ in the
//! direction `h` splits into a value part and a slope part,
//! `DA[γ]⟨h⟩ = A₁[γ]·h + A₂[γ]·h′`, which is what the Newton coupling blocks
//! assemble.

use thiserror::Error;

/// Smallest admissible film thickness `1+γ`.  Geometry at or below this is
/// treated as collapsed: `A[γ]` blows up like `1/(1+γ)` and the state system
/// loses ellipticity, so solvers reject the configuration instead of
/// producing garbage.
pub const MIN_THICKNESS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("collapsed geometry: film thickness 1+γ = {thickness:.3e} (minimum {MIN_THICKNESS:.0e})")]
    Collapsed { thickness: f64 },
}

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

/// `A[γ]` and the two derivative factors at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct CoeffSample {
    /// The coefficient matrix `A[γ]`.
    pub a: Mat2,
    /// Factor multiplying the perturbation value: `∂A/∂γ`.
    pub a1: Mat2,
    /// Factor multiplying the perturbation slope: `∂A/∂γ′`.
    pub a2: Mat2,
}

/// Evaluates `A[γ]`, `A₁[γ]`, `A₂[γ]` at a point with trace value `gamma`,
/// trace slope `dgamma` and height `x2`.
pub fn eval_coeff(gamma: f64, dgamma: f64, x2: f64) -> Result<CoeffSample, GeometryError> {
    let thickness = 1.0 + gamma;
    if thickness.is_nan() || thickness <= MIN_THICKNESS {
        return Err(GeometryError::Collapsed { thickness });
    }
    let gx = dgamma * x2;
    let a = [[thickness, -gx], [-gx, (1.0 + gx * gx) / thickness]];
    let a1 = [[1.0, 0.0], [0.0, -(1.0 + gx * gx) / (thickness * thickness)]];
    let a2 = [[0.0, -x2], [-x2, 2.0 * dgamma * x2 * x2 / thickness]];
    Ok(CoeffSample { a, a1, a2 })
}

/// Evaluates the coefficient matrix `A[γ]` at one point.
pub fn eval_a(gamma: f64, dgamma: f64, x2: f64) -> Result<Mat2, GeometryError> {
    eval_coeff(gamma, dgamma, x2).map(|s| s.a)
}

/// Evaluates the directional derivative `DA[γ]⟨h⟩ = A₁·h + A₂·h′` at one
/// point, for a perturbation with value `h_val` and slope `dh_val`.
pub fn eval_da(
    gamma: f64,
    dgamma: f64,
    x2: f64,
    h_val: f64,
    dh_val: f64,
) -> Result<Mat2, GeometryError> {
    let s = eval_coeff(gamma, dgamma, x2)?;
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| s.a1[i][j] * h_val + s.a2[i][j] * dh_val)
    }))
}
