use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Pr[b · cᵀx(t) ≥ x_max] ≤ β` for every `t` in `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChanceConstraint {
    /// Weights of the constrained linear combination of states.
    pub coeffs: Vec<f64>,
    pub b: f64,
    pub x_max: f64,
    pub beta: f64,
    pub grid: Vec<f64>,
}

impl ChanceConstraint {
    pub fn new(coeffs: Vec<f64>, b: f64, x_max: f64, beta: f64, grid: Vec<f64>) -> Result<Self> {
        let cc = ChanceConstraint { coeffs, b, x_max, beta, grid };
        cc.validate()?;
        Ok(cc)
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !self.b.is_finite() || self.b == 0.0 {
            return Err(Error::invalid("b", "orientation must be finite and non-zero"));
        }
        if !self.x_max.is_finite() {
            return Err(Error::invalid("x_max", "threshold must be finite"));
        }
        if self.coeffs.is_empty() || self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coeffs", "need at least one finite coefficient"));
        }
        if self.grid.is_empty() || self.grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("grid", "enforcement times must be finite and non-negative"));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid", "enforcement times must be strictly increasing"));
        }
        Ok(())
    }

    /// `cᵀx`.
    pub fn target(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Whether a realized trajectory value satisfies the inequality inside
    /// the probability, i.e. `b · value < x_max`.
    pub fn holds(&self, value: f64) -> bool {
        self.b * value < self.x_max
    }

    pub fn margin(&self, mean: f64, var: f64) -> Result<f64> {
        surrogate_margin(mean, var, self)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("beta", "risk level must lie strictly between 0 and 1"));
    }
    Ok(())
}

/// Distance by which the deterministic surrogate
/// `b·E + sqrt(b²·Var)·sqrt((1−β)/β) ≤ x_max` is satisfied; negative when violated.
pub fn surrogate_margin(mean: f64, var: f64, cc: &ChanceConstraint) -> Result<f64> {
    check_beta(cc.beta)?;
    if !(var >= 0.0) || !mean.is_finite() {
        return Err(Error::invalid("var", "variance must be non-negative and mean finite"));
    }
    let b = cc.b;
    Ok(cc.x_max - b * mean - (b * b * var).sqrt() * ((1.0 - cc.beta) / cc.beta).sqrt())
}

/// One-sided Chebyshev bound on `Pr[ψ − E[ψ] ≥ α]`.
pub fn cantelli_bound(var: f64, alpha: f64) -> Result<f64> {
    if !(var >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::invalid("cantelli", "variance and offset must be non-negative"));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    Ok(var / (var + alpha * alpha))
}
