//! Robust optimal experiment design: criteria, chance-constraint
//! surrogates and a multi-start simplex solver over input levels.

mod chance;
mod criterion;
mod design;
mod nelder_mead;

pub use chance::{cantelli_bound, surrogate_margin, ChanceConstraint};
pub use criterion::{criterion_value, Criterion};
pub use design::{ConstraintMoments, DesignProblem, DesignResult, MomentRow, ObjectiveValue, SolverOptions};
pub use nelder_mead::{nelder_mead, Bounds, Minimum, NelderMeadOptions};
