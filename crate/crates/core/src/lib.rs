//! Numerical laboratory for Metropolis-Hastings chains with unimodal targets.
//!
//! The crate pairs every closed-form mixing bound for random-walk
//! Metropolis-Hastings on a compact interval with an exact brute-force twin:
//!
//! - [`model`]: target densities, isotropic proposals and the structural
//!   checks they must satisfy (unimodality, near-uniformity at the mode,
//!   sub-exponential proposal envelope).
//! - [`kernel`]: the MH kernel, its restriction to an interval, and the
//!   forward-map representation `F(x, Δ, U)`.
//! - [`operator_lab`]: finite-grid transition matrices, exact spectral gaps,
//!   total-variation curves and mixing times, canonical-path gap bounds.
//! - [`drift`]: Lyapunov evaluation `(PV)(x)`, drift-constant fitting and
//!   sublevel sets.
//! - [`bounds`]: closed-form mixing, gap, escape and Harris-rate bounds plus
//!   calibration of the unspecified constants.
//! - [`coupling`]: the shared-innovation triple chain and its hitting-time
//!   experiments.
//! - [`harness`]: sweep orchestration, CSV reports, scaling fits and SVG plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod coupling;
pub mod drift;
mod error;
pub mod harness;
pub mod kernel;
pub mod model;
pub mod operator_lab;
pub mod quad;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
