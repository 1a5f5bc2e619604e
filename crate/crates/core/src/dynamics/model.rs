use std::sync::Arc;

use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side, outputs and Jacobians of `ẋ = f(x, x_d, u, θ)`, `y = h(x)`.
///
/// `x_d` holds values of delayed state arguments; models without delays
/// leave [`Dynamics::n_delayed`] at zero and ignore it. Jacobians default to
/// central finite differences, analytic implementations override them.
pub trait Dynamics: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_theta(&self) -> usize;
    fn n_y(&self) -> usize;
    fn n_delayed(&self) -> usize {
        0
    }

    fn rhs(&self, x: &[f64], xd: &[f64], u: f64, theta: &[f64], dx: &mut [f64]);
    fn output(&self, x: &[f64], y: &mut [f64]);

    /// `∂f/∂x`, `n_x × n_x`.
    fn jac_x(&self, x: &[f64], xd: &[f64], u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        fd_jacobian(self.n_x(), x, out, |xp, dx| self.rhs(xp, xd, u, theta, dx));
    }

    /// `∂f/∂x_d`, `n_x × n_delayed`.
    fn jac_xd(&self, x: &[f64], xd: &[f64], u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        fd_jacobian(self.n_x(), xd, out, |xdp, dx| self.rhs(x, xdp, u, theta, dx));
    }

    /// `∂f/∂θ`, `n_x × n_θ`.
    fn jac_theta(&self, x: &[f64], xd: &[f64], u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        fd_jacobian(self.n_x(), theta, out, |tp, dx| self.rhs(x, xd, u, tp, dx));
    }

    /// `∂h/∂x`, `n_y × n_x`.
    fn jac_output(&self, x: &[f64], out: &mut DMatrix<f64>) {
        fd_jacobian(self.n_y(), x, out, |xp, y| self.output(xp, y));
    }

    /// Forward sensitivity right-hand side `dS = ∂f/∂x · S + ∂f/∂θ` for a
    /// model without delayed arguments. `s` and `ds` are `n_x × n_θ`.
    fn sensitivity_rhs(&self, x: &[f64], u: f64, theta: &[f64], s: &DMatrix<f64>, ds: &mut DMatrix<f64>) {
        let (nx, np) = (self.n_x(), self.n_theta());
        let mut jx = DMatrix::zeros(nx, nx);
        let mut jt = DMatrix::zeros(nx, np);
        self.jac_x(x, &[], u, theta, &mut jx);
        self.jac_theta(x, &[], u, theta, &mut jt);
        ds.copy_from(&jt);
        ds.gemm(1.0, &jx, s, 1.0);
    }
}

/// Central-difference Jacobian of `g: Rⁿ → R^rows` at `at`.
pub fn fd_jacobian(rows: usize, at: &[f64], out: &mut DMatrix<f64>, mut g: impl FnMut(&[f64], &mut [f64])) {
    let mut p = at.to_vec();
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for j in 0..at.len() {
        let h = 6e-6 * at[j].abs().max(1.0);
        p[j] = at[j] + h;
        g(&p, &mut fp);
        p[j] = at[j] - h;
        g(&p, &mut fm);
        p[j] = at[j];
        for i in 0..rows {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Measurement-noise standard deviation per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoisePolicy {
    /// `σᵢ = fraction · max(|yᵢ|, floor)`.
    Relative { fraction: f64, floor: f64 },
    /// Constant `σᵢ`.
    Absolute { sigma: Vec<f64> },
}

impl Default for NoisePolicy {
    fn default() -> Self {
        NoisePolicy::Relative { fraction: 0.10, floor: 1e-3 }
    }
}

impl NoisePolicy {
    pub fn validate(&self, n_y: usize) -> Result<()> {
        match self {
            NoisePolicy::Relative { fraction, floor } => {
                if !(fraction.is_finite() && *fraction > 0.0) {
                    return Err(Error::invalid("noise.fraction", "must be positive"));
                }
                if !(floor.is_finite() && *floor > 0.0) {
                    return Err(Error::invalid("noise.floor", "must be positive"));
                }
            }
            NoisePolicy::Absolute { sigma } => {
                if sigma.len() != n_y {
                    return Err(Error::DimensionMismatch { what: "noise.sigma", expected: n_y, got: sigma.len() });
                }
                if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(Error::invalid("noise.sigma", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Noise standard deviation for output `i` at value `y`.
    #[inline]
    pub fn sigma(&self, i: usize, y: f64) -> f64 {
        match self {
            NoisePolicy::Relative { fraction, floor } => fraction * y.abs().max(*floor),
            NoisePolicy::Absolute { sigma } => sigma[i],
        }
    }
}

/// A model together with its nominal initial state and noise description.
#[derive(Clone)]
pub struct ModelSpec {
    dynamics: Arc<dyn Dynamics>,
    x0: Vec<f64>,
    /// `∂x₀/∂θ`; `None` means initial states do not depend on θ.
    dx0_dtheta: Option<DMatrix<f64>>,
    noise: NoisePolicy,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("n_x", &self.n_x())
            .field("n_theta", &self.n_theta())
            .field("n_y", &self.n_y())
            .field("x0", &self.x0)
            .field("noise", &self.noise)
            .finish()
    }
}

impl ModelSpec {
    pub fn new(dynamics: Arc<dyn Dynamics>, x0: Vec<f64>, noise: NoisePolicy) -> Result<Self> {
        if x0.len() != dynamics.n_x() {
            return Err(Error::DimensionMismatch { what: "x0", expected: dynamics.n_x(), got: x0.len() });
        }
        noise.validate(dynamics.n_y())?;
        Ok(ModelSpec { dynamics, x0, dx0_dtheta: None, noise })
    }

    pub fn with_initial_sensitivity(mut self, s0: DMatrix<f64>) -> Result<Self> {
        if s0.shape() != (self.n_x(), self.n_theta()) {
            return Err(Error::DimensionMismatch { what: "dx0/dtheta rows", expected: self.n_x(), got: s0.nrows() });
        }
        self.dx0_dtheta = Some(s0);
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoisePolicy) -> Result<Self> {
        noise.validate(self.n_y())?;
        self.noise = noise;
        Ok(self)
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.n_x() {
            return Err(Error::DimensionMismatch { what: "x0", expected: self.n_x(), got: x0.len() });
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn initial_sensitivity(&self) -> DMatrix<f64> {
        self.dx0_dtheta.clone().unwrap_or_else(|| DMatrix::zeros(self.n_x(), self.n_theta()))
    }

    pub fn noise(&self) -> &NoisePolicy {
        &self.noise
    }

    pub fn n_x(&self) -> usize {
        self.dynamics.n_x()
    }

    pub fn n_theta(&self) -> usize {
        self.dynamics.n_theta()
    }

    pub fn n_y(&self) -> usize {
        self.dynamics.n_y()
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_y()];
        self.dynamics.output(x, &mut y);
        y
    }
}
