//! # brodinger-core
//!
//! Desk-scale numerics for kinetic and entropic transport problems on the flat
//! torus `T^d = (R/Z)^d`, `d ∈ {1, 2}`:
//!
//! | Problem | Unknown | Module |
//! |---------|---------|--------|
//! | quadratic optimal transport | curve of densities | [`measures`] (exact W₂ on the circle) |
//! | Schrödinger problem | curve of densities | [`schrodinger`] |
//! | Brenier relaxed Euler | path measure on a lattice | [`flows`] (linear program) |
//! | Brödinger problem | path measure on a lattice | [`flows`] (multimarginal scaling) |
//! | multiphase Brödinger / Brenier | weighted family of curves | [`multiphase`] |
//!
//! Supporting machinery:
//!
//! - [`torus`]: grid geometry, wrap-around distances.
//! - [`heat`]: the heat semigroup with generator `Δ/2`, both as a lattice
//!   theta series and as a Fourier multiplier.
//! - [`regularizer`]: the heat-flow regularization `ρ_t ↦ ρ_t * τ_{νt(1-t)}` of
//!   a curve, with a verifier for the associated action/entropy inequalities.
//! - [`path_lab`]: Brownian motion and bridges on the torus, discrete path
//!   actions, exact Gaussian relative entropies, Monte-Carlo entropy bounds.
//! - [`io`]: JSON/CSV schemas for densities, curves, couplings and phase specs.
//!
//! Conventions: all masses live on a cell-centered grid (`x_i = (i + 1/2)/m`),
//! densities are taken with respect to the normalized Lebesgue measure, and
//! momenta are density-weighted velocities (`m = ρ c`).

pub mod curves;
pub mod flows;
pub mod heat;
pub mod io;
pub mod lp;
pub mod measures;
pub mod multiphase;
pub mod path_lab;
pub mod quadrature;
pub mod regularizer;
pub mod rng;
pub mod schrodinger;
pub mod spectral;
pub mod torus;

use thiserror::Error;

pub use heat::{gaussian_bound_ratio, heat_convolve, theta_kernel};
pub use measures::{
    continuity_residual, entropy, fisher_info, kinetic_action, wasserstein2_circle, DensityCurve,
    GridDensity, VectorField,
};
pub use torus::{geodesic_dist, wrap, TorusGrid};

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operation only defined in a particular dimension.
    #[error("unsupported dimension d = {0}")]
    UnsupportedDimension(usize),

    /// Two objects live on incompatible grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A density violates nonnegativity or unit mass.
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    /// Spectral evaluation produced negative values beyond round-off.
    #[error("heat flow ringing: minimum value {min:e} (max {max:e})")]
    HeatRinging { min: f64, max: f64 },

    /// An iterative solver hit its iteration cap.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// Non-finite values appeared in a log-domain field.
    #[error("numerical underflow: {0}")]
    Underflow(String),

    /// A linear constraint set is inconsistent.
    #[error("constraint error: {0}")]
    Constraint(String),

    /// Problem size above a hard cap.
    #[error("capacity exceeded: {what} = {size} > {cap}")]
    Capacity {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    /// Monte-Carlo estimate too noisy for the requested check.
    #[error("sample size too small: {0}")]
    SampleSize(String),

    /// Two independent evaluations of the same quantity disagree.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    /// A first-order optimality audit rejected the result.
    #[error("audit failed: {0}")]
    Audit(String),

    /// Malformed serialized input.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
