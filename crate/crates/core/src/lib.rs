//! Kinetically constrained symmetric exclusion processes on the discrete torus.
//!
//! The crate provides the building blocks for studying how non-linear
//! diffusion emerges from constrained lattice gases:
//!
//! * [`lattice`] — bit-packed occupation configurations on the periodic
//!   lattice and the elementary operators (shift, exchange, window counts).
//! * [`constraints`] — the constraint families (SSEP, porous-media, Bernstein,
//!   the interpolating family and superpositions), per-bond exchange rates and
//!   exact Bernoulli-product expectations.
//! * [`gradient`] — the decomposition of the instantaneous current into a
//!   discrete gradient, numeric certification of that property, the flux
//!   function `Phi`, growth-condition checks, regime classification and
//!   mobile-cluster certificates.
//! * [`simulator`] — exact event-driven simulation of the diffusively
//!   rescaled process with reproducible seeding and coarse-grained
//!   density observables.
//! * [`pde`] — a conservative explicit solver for the limiting equation
//!   `d/dt rho = d^2/du^2 Phi(rho)` and the weak-formulation residual.

pub mod constraints;
pub mod gradient;
pub mod lattice;
pub mod pde;
pub mod simulator;

use thiserror::Error;

/// Errors shared by all modules of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A window, support or lattice size constraint was violated.
    #[error("size error: {0}")]
    Size(String),
    /// A parameter lies outside its documented domain.
    #[error("config error: {0}")]
    Config(String),
    /// Two grids (time or space) that must match do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    /// Parsing of a textual representation failed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
