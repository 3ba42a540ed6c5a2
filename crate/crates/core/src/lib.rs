//! Finite-volume solver for the LWR traffic-flow conservation law and
//! gradient-free Bayesian inference of fundamental-diagram parameters and
//! functional boundary conditions.
//!
//! The crate is organized around the inference pipeline:
//!
//! - [`fd`]: fundamental diagrams (flow-density relations), wave speeds, and
//!   branch inversion.
//! - [`solver`]: Godunov finite-volume scheme with a minmod-limited
//!   second-order correction, CFL time stepping, and time-series boundary
//!   conditions.
//! - [`prior`]: log-OU Gaussian-process prior over boundary conditions, its
//!   Karhunen-Loeve truncation, and OU hyperparameter fitting.
//! - [`model`]: observation operator (PDE forward map to detector flows),
//!   Poisson count likelihood, and tempered posterior.
//! - [`samplers`]: random-walk Metropolis, pCN, affine-invariant ensemble
//!   moves, the functional ensemble sampler, and parallel tempering.
//! - [`data`]: detector-data ingestion, density estimators, and synthetic-twin
//!   generation.
//! - [`diagnostics`]: effective sample size and chain summaries.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fd;
pub mod model;
pub mod prior;
pub mod samplers;
pub mod solver;

pub use error::{Error, Result};
