use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};

/// Scalar design criterion on the Fisher information. Larger is better for
/// every variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum Criterion {
    /// Smallest eigenvalue.
    #[default]
    #[serde(rename = "e_opt")]
    E,
    /// `−trace(F⁻¹)`.
    #[serde(rename = "a_opt")]
    A,
    /// `log det F`.
    #[serde(rename = "d_opt")]
    D,
}

/// Evaluates `criterion` on the symmetric part of `f`. A and D return
/// `-inf` when `f` is singular.
pub fn criterion_value(f: &DMatrix<f64>, criterion: Criterion) -> Result<f64> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Fisher information"));
    }
    let values = symmetric_eigen(f)?.values;
    let Some(&lo) = values.first() else {
        return Err(Error::invalid("fim", "empty matrix"));
    };
    if criterion == Criterion::E {
        return Ok(lo);
    }
    let hi = values[values.len() - 1];
    if lo <= values.len() as f64 * f64::EPSILON * hi.abs() || lo <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(match criterion {
        Criterion::A => -values.iter().map(|v| 1.0 / v).sum::<f64>(),
        _ => values.iter().map(|v| v.ln()).sum(),
    })
}
