#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

//! Splitting integrators for semi-linear SDEs with additive noise, Euler-type
//! baselines, and the analysis routines used to compare them.

pub mod analysis;
pub mod integrators;
pub mod linalg;
pub mod models;
pub mod noise;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
