//! Solvers and certificates for the two-dimensional monopolist nonlinear
//! pricing problem with types on the square `[a, a+1]^2`.
//!
//! - [`model`]: grids, fields, the profit functional and conjugation
//! - [`primal`]: direct maximization over the discrete cone of admissible payoffs
//! - [`dual`]: dual candidates, duality gap and slackness residuals
//! - [`region`]: Hessian-rank stratification and bunch extraction
//! - [`fbp`]: the free-boundary reconstruction and the straight-boundary baseline
//! - [`market`]: price menu, best responses and profit replay

pub mod dual;
pub mod error;
pub mod fbp;
pub mod market;
pub mod model;
pub mod parallel;
pub mod primal;
pub mod region;
mod sparse;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
