//! Maximum-entropy singular potentials over moment constraints.
//!
//! Given a finite measure space `(X, mu)` and bounded constraint functions
//! `a_1, ..., a_k`, the admissible moment set `Q` collects the statistical
//! averages `b_i = \int a_i rho dmu` realisable by probability densities.
//! The singular potential `psi_s(b)` is the least value of `\int phi(rho) dmu`
//! among densities generating `b`, for an entropy-like objective `phi`; it is
//! strictly convex on `Q` and blows up at the boundary.
//!
//! The crate evaluates `psi_s` and its first two derivatives through the
//! finite-dimensional concave dual problem, provides geometric operations on
//! `Q` (support functions, membership certificates, boundary distances,
//! concentration estimates), fourth-order Taylor and Yosida-Moreau
//! approximations, and mean-field free-energy equilibria in the dual order
//! parameter. Built-in models cover the interval examples, the McMillan
//! smectic-A model and the sphere chain.
//!
//! Entry points:
//! - [`models`] for ready-made [`Model`]s,
//! - [`dual_solver::solve`] for the dual optimisation at a given moment vector,
//! - [`moment_geometry::Geometry`] for the moment set,
//! - [`singular_potential`] for `psi_s`, its gradient and Hessian,
//! - [`approximation`] for Taylor quartics, 1-D discriminants and `psi^J`,
//! - [`mean_field`] for free-energy minimisation and stability bounds,
//! - [`config`] for the TOML model-description format used by the CLI.

#![forbid(unsafe_code)]

pub mod approximation;
pub mod config;
pub mod dual_solver;
pub mod entropy;
pub mod mean_field;
pub mod models;
pub mod moment_geometry;
pub mod numeric;
pub mod singular_potential;
pub mod state_space;

use thiserror::Error;

pub use entropy::EntropyFunction;
pub use state_space::{ConstraintSet, StateSpace};

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("entropy evaluated outside its domain: x = {0}")]
    EntropyDomain(f64),

    #[error(
        "dual problem unattained: |lambda| exceeded the cap {cap:.3e} after {iterations} iterations \
         (the moment vector lies outside or on the boundary of Q)"
    )]
    UnattainedDual { cap: f64, iterations: usize },

    #[error(
        "solver did not converge within {iterations} iterations; residual {residual:.3e} \
         (best iterate retained in the diagnostic)"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<dual_solver::DualSolution>,
    },

    #[error("operation inapplicable: {0}")]
    Inapplicable(String),

    #[error("constraint set infeasible: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A measure space, constraint functions and entropy bundled together.
///
/// This is the unit most operations act on; built-in models in [`models`]
/// produce it directly and [`config::ModelConfig`] parses one from TOML.
#[derive(Clone)]
pub struct Model {
    pub space: StateSpace,
    pub constraints: ConstraintSet,
    pub entropy: EntropyFunction,
}

impl Model {
    pub fn new(space: StateSpace, constraints: ConstraintSet, entropy: EntropyFunction) -> Self {
        Self { space, constraints, entropy }
    }

    /// Number of constraint functions (the dimension of moment vectors).
    pub fn k(&self) -> usize {
        self.constraints.k()
    }

    /// Geometry handle for the moment set of this model.
    pub fn geometry(&self) -> moment_geometry::Geometry<'_> {
        moment_geometry::Geometry::new(&self.space, &self.constraints)
    }

    /// Replace the constraints by their orthonormalised version.
    pub fn orthonormalized(&self) -> Result<Self> {
        let constraints = state_space::orthonormalize(&self.constraints, &self.space)?;
        Ok(Self { space: self.space.clone(), constraints, entropy: self.entropy.clone() })
    }
}
