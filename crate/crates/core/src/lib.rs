//! Principal half-eigenvalues and solution branches of discrete convex
//! Hamilton-Jacobi-Bellman Dirichlet problems.

// NaN-rejecting comparisons and index loops are deliberate in the numeric code
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod branch;
pub mod checks;
pub mod continuation;
pub mod error;
pub mod grid;
pub mod operator;
pub mod solver;
pub mod spectral;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use grid::{build_grid, signed_distance, sup_norm, Grid, GridFunction, SubdomainMask};
pub use operator::{check_h0_h3, ControlCoeffs, ControlFamily, DiscreteOperator, Envelope, FamilyKind, Orientation};
