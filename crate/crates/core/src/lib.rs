//! Path-dependent optimal stochastic control at desk scale.
//!
//! The crate is organised by layer:
//!
//! - [`pathspace`]: sampled paths, the parabolic metric, Hölder moduli and
//!   the path operators (flat extension, bumps, truncation, perturbation).
//! - [`funcalc`]: Dupire vertical/horizontal derivatives, the functional Itô
//!   residual and a registry of test functionals.
//! - [`dynamics`]: Euler–Maruyama simulation of path-dependent controlled
//!   SDEs and Hölder-modulus statistics.
//! - [`backward`]: regression and lattice BSDE solvers, the backward
//!   semigroup, cost functional, comparison and DPP checks.
//! - [`cascade`]: the Markovian lift of the path-dependent Bellman equation
//!   into chained finite-difference HJB solves.
//! - [`viscosity`]: Hamiltonians, PPDE residuals, semi-jet tests and the
//!   verification demo.
//! - [`cli`]: configuration-driven experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod cascade;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod funcalc;
pub mod par;
pub mod pathspace;
pub mod problems;
pub mod viscosity;

pub use error::{Error, Result};
pub use pathspace::{CylinderSpec, HolderParams, Path, PathKind};
