//! Robust optimal experiment design for nonlinear dynamical systems with
//! probabilistic time-invariant uncertainties.
//!
//! Uncertainties are propagated with polynomial chaos expansions fitted by
//! collocation, chance constraints are replaced by Cantelli–Chebyshev
//! surrogates on the expansion moments, and designs are checked by Monte
//! Carlo re-estimation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod eigen;
pub mod error;
mod fmt;
pub mod models;
pub mod oed;
pub mod pce;
pub mod polynomials;
pub mod validate;

pub use error::{Error, Result};
