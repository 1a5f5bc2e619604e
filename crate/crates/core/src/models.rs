//! Uncertainty descriptions and built-in reference models.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution as _, Gamma, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynamics::{delay_chain, DelayRef, Dynamics, ModelSpec, NoisePolicy};
use crate::error::{Error, Result};
use crate::polynomials::PolyFamily;

/// Univariate time-invariant uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    /// Beta(alpha, beta) stretched onto `[lo, hi]`.
    Beta4 {
        alpha: f64,
        beta: f64,
        lo: f64,
        hi: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    Dirac {
        value: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be finite"))
            }
        };
        match *self {
            Distribution::Beta4 { alpha, beta, lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
                }
                if !(beta.is_finite() && beta > 0.0) {
                    return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
                }
                if lo >= hi {
                    return Err(Error::invalid("lo", "lower support bound must be below upper"));
                }
            }
            Distribution::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if lo >= hi {
                    return Err(Error::invalid("lo", "lower support bound must be below upper"));
                }
            }
            Distribution::Gaussian { mu, sigma } => {
                finite("mu", mu)?;
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::invalid("sigma", format!("must be positive, got {sigma}")));
                }
            }
            Distribution::Dirac { value } => finite("value", value)?,
        }
        Ok(())
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, Distribution::Dirac { .. })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Beta4 { alpha, beta, lo, hi } => lo + (hi - lo) * alpha / (alpha + beta),
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Gaussian { mu, .. } => mu,
            Distribution::Dirac { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Beta4 { alpha, beta, lo, hi } => {
                let s = alpha + beta;
                (hi - lo).powi(2) * alpha * beta / (s * s * (s + 1.0))
            }
            Distribution::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Distribution::Gaussian { sigma, .. } => sigma * sigma,
            Distribution::Dirac { .. } => 0.0,
        }
    }

    /// Closed support; unbounded for Gaussians.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Beta4 { lo, hi, .. } | Distribution::Uniform { lo, hi } => (lo, hi),
            Distribution::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Distribution::Dirac { value } => (value, value),
        }
    }

    /// Beta via the ratio of two Gamma variates, Gaussian via a standard
    /// normal draw, both then mapped affinely.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Beta4 { alpha, beta, lo, hi } => {
                let ga = Gamma::new(alpha, 1.0).expect("validated shape").sample(rng);
                let gb = Gamma::new(beta, 1.0).expect("validated shape").sample(rng);
                lo + (hi - lo) * ga / (ga + gb)
            }
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Distribution::Gaussian { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
            Distribution::Dirac { value } => value,
        }
    }

    /// Polynomial family of the matching standard variable; `None` for Dirac.
    pub fn family(&self) -> Option<PolyFamily> {
        match *self {
            Distribution::Beta4 { alpha, beta, .. } => Some(PolyFamily::Jacobi { a: beta - 1.0, b: alpha - 1.0 }),
            Distribution::Uniform { .. } => Some(PolyFamily::Legendre),
            Distribution::Gaussian { .. } => Some(PolyFamily::Hermite),
            Distribution::Dirac { .. } => None,
        }
    }

    /// Maps a standard-variable value onto this distribution.
    pub fn from_standard(&self, xi: f64) -> f64 {
        match *self {
            Distribution::Beta4 { lo, hi, .. } | Distribution::Uniform { lo, hi } => lo + (hi - lo) * (xi + 1.0) / 2.0,
            Distribution::Gaussian { mu, sigma } => mu + sigma * xi,
            Distribution::Dirac { value } => value,
        }
    }
}

/// What an uncertainty entry perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Target {
    Parameter(usize),
    InitialState(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct UncertainEntry {
    pub target: Target,
    pub dist: Distribution,
}

/// Independent uncertainties on parameters and initial states, plus the
/// parameter values used for anything not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    entries: Vec<UncertainEntry>,
    base_theta: Vec<f64>,
}

impl UncertaintySet {
    pub fn new(entries: Vec<UncertainEntry>, base_theta: Vec<f64>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            e.dist.validate()?;
            if entries[..i].iter().any(|o| o.target == e.target) {
                return Err(Error::invalid("uncertainty", format!("{:?} targeted more than once", e.target)));
            }
            if let Target::Parameter(p) = e.target {
                if p >= base_theta.len() {
                    return Err(Error::invalid("uncertainty", format!("parameter index {p} out of range")));
                }
            }
        }
        Ok(UncertaintySet { entries, base_theta })
    }

    pub fn entries(&self) -> &[UncertainEntry] {
        &self.entries
    }

    pub fn base_theta(&self) -> &[f64] {
        &self.base_theta
    }

    /// Number of non-degenerate entries, i.e. standard random variables.
    pub fn n_xi(&self) -> usize {
        self.entries.iter().filter(|e| !e.dist.is_dirac()).count()
    }

    /// Same targets, every distribution collapsed to a Dirac at its mean.
    pub fn collapsed_to_means(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| UncertainEntry { target: e.target, dist: Distribution::Dirac { value: e.dist.mean() } })
            .collect();
        UncertaintySet { entries, base_theta: self.base_theta.clone() }
    }

    /// Parameter vector with every entry at its mean.
    pub fn mean_theta(&self) -> Vec<f64> {
        let mut theta = self.base_theta.clone();
        for e in &self.entries {
            if let Target::Parameter(p) = e.target {
                theta[p] = e.dist.mean();
            }
        }
        theta
    }

    /// Per-parameter support boxes; unlisted parameters are pinned.
    pub fn theta_bounds(&self) -> Vec<(f64, f64)> {
        let mut b: Vec<(f64, f64)> = self.base_theta.iter().map(|&v| (v, v)).collect();
        for e in &self.entries {
            if let Target::Parameter(p) = e.target {
                b[p] = e.dist.support();
            }
        }
        b
    }

    /// Draws `(θ, x₀)` with entries sampled in declaration order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, x0_base: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut theta = self.base_theta.clone();
        let mut x0 = x0_base.to_vec();
        for e in &self.entries {
            let v = e.dist.sample(rng);
            assign(e.target, v, &mut theta, &mut x0)?;
        }
        Ok((theta, x0))
    }

    pub fn to_standard(&self, x0_base: &[f64]) -> Result<StandardMap> {
        let mut families = Vec::new();
        let mut random = Vec::new();
        for e in &self.entries {
            if let Target::InitialState(i) = e.target {
                if i >= x0_base.len() {
                    return Err(Error::invalid("uncertainty", format!("initial state index {i} out of range")));
                }
            }
            if let Some(f) = e.dist.family() {
                families.push(f);
                random.push(e.clone());
            }
        }
        let mut theta = self.base_theta.clone();
        let mut x0 = x0_base.to_vec();
        for e in self.entries.iter().filter(|e| e.dist.is_dirac()) {
            assign(e.target, e.dist.mean(), &mut theta, &mut x0)?;
        }
        Ok(StandardMap { families, random, theta, x0 })
    }
}

fn assign(target: Target, v: f64, theta: &mut [f64], x0: &mut [f64]) -> Result<()> {
    match target {
        Target::Parameter(p) => {
            *theta.get_mut(p).ok_or_else(|| Error::invalid("uncertainty", "parameter index out of range"))? = v
        }
        Target::InitialState(i) => {
            *x0.get_mut(i).ok_or_else(|| Error::invalid("uncertainty", "initial state index out of range"))? = v
        }
    }
    Ok(())
}

/// Map from standard variables `ξ` to full `(θ, x₀)` vectors.
#[derive(Debug, Clone)]
pub struct StandardMap {
    families: Vec<PolyFamily>,
    random: Vec<UncertainEntry>,
    theta: Vec<f64>,
    x0: Vec<f64>,
}

impl StandardMap {
    pub fn families(&self) -> &[PolyFamily] {
        &self.families
    }

    pub fn n_xi(&self) -> usize {
        self.families.len()
    }

    pub fn map(&self, xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if xi.len() != self.families.len() {
            return Err(Error::DimensionMismatch { what: "xi", expected: self.families.len(), got: xi.len() });
        }
        let mut theta = self.theta.clone();
        let mut x0 = self.x0.clone();
        for (e, &z) in self.random.iter().zip(xi) {
            assign(e.target, e.dist.from_standard(z), &mut theta, &mut x0)?;
        }
        Ok((theta, x0))
    }
}

/// Rate constant of the dimerization step.
pub const STAT5_K3: f64 = 1.0;
/// Nuclear residence delay.
pub const STAT5_TAU: f64 = 8.0;
pub const STAT5_S1: f64 = 0.33;
pub const STAT5_S2: f64 = 0.26;
pub const STAT5_DEFAULT_STAGES: usize = 20;

/// Default pre-stimulation state: all STAT5 unphosphorylated in the
/// cytoplasm. The total amount is scaled so that the lower bound of 0.038
/// on `y₂` becomes active for strongly exciting inputs; at unit total `y₂`
/// never gets near it.
pub const STAT5_X0: [f64; 4] = [0.185, 0.0, 0.0, 0.0];

/// JAK-STAT5 pathway with `θ = (k₁, k₂)` and one delayed slot for `x₃(t − τ)`:
///
/// ```text
/// ẋ₁ = −k₁x₁u + k₂x₃(t−τ)
/// ẋ₂ = −k₃x₂² + k₁x₁u
/// ẋ₃ = −k₂x₃ + k₃x₂²
/// ẋ₄ = −k₂x₃(t−τ) + k₂x₃
/// y₁ = s₁(x₂ + x₃),  y₂ = s₂(x₁ + x₂ + x₃)
/// ```
#[derive(Debug, Clone, Copy)]
pub struct Stat5 {
    pub k3: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for Stat5 {
    fn default() -> Self {
        Stat5 { k3: STAT5_K3, s1: STAT5_S1, s2: STAT5_S2 }
    }
}

impl Dynamics for Stat5 {
    fn n_x(&self) -> usize {
        4
    }

    fn n_theta(&self) -> usize {
        2
    }

    fn n_y(&self) -> usize {
        2
    }

    fn n_delayed(&self) -> usize {
        1
    }

    fn rhs(&self, x: &[f64], xd: &[f64], u: f64, theta: &[f64], dx: &mut [f64]) {
        let (k1, k2) = (theta[0], theta[1]);
        let activation = k1 * x[0] * u;
        let dimerization = self.k3 * x[1] * x[1];
        dx[0] = -activation + k2 * xd[0];
        dx[1] = -dimerization + activation;
        dx[2] = -k2 * x[2] + dimerization;
        dx[3] = -k2 * xd[0] + k2 * x[2];
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = self.s1 * (x[1] + x[2]);
        y[1] = self.s2 * (x[0] + x[1] + x[2]);
    }

    fn jac_x(&self, x: &[f64], _xd: &[f64], u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        let (k1, k2) = (theta[0], theta[1]);
        out.fill(0.0);
        out[(0, 0)] = -k1 * u;
        out[(1, 0)] = k1 * u;
        out[(1, 1)] = -2.0 * self.k3 * x[1];
        out[(2, 1)] = 2.0 * self.k3 * x[1];
        out[(2, 2)] = -k2;
        out[(3, 2)] = k2;
    }

    fn jac_xd(&self, _x: &[f64], _xd: &[f64], _u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 0)] = theta[1];
        out[(3, 0)] = -theta[1];
    }

    fn jac_theta(&self, x: &[f64], xd: &[f64], u: f64, _theta: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 0)] = -x[0] * u;
        out[(1, 0)] = x[0] * u;
        out[(0, 1)] = xd[0];
        out[(2, 1)] = -x[2];
        out[(3, 1)] = x[2] - xd[0];
    }

    fn jac_output(&self, _x: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 1)] = self.s1;
        out[(0, 2)] = self.s1;
        out[(1, 0)] = self.s2;
        out[(1, 1)] = self.s2;
        out[(1, 2)] = self.s2;
    }
}

/// Prior on `k₁`.
pub const STAT5_K1: Distribution = Distribution::Beta4 { alpha: 2.0, beta: 5.0, lo: 1.90, hi: 2.34 };
/// Prior on `k₂`.
pub const STAT5_K2: Distribution = Distribution::Beta4 { alpha: 2.0, beta: 5.0, lo: 0.094, hi: 0.124 };

/// STAT5 model with the delay resolved by an `n_stages` chain, default
/// initial state and noise, and the Beta priors on `(k₁, k₂)`.
pub fn stat5_model(n_stages: usize) -> Result<(ModelSpec, UncertaintySet)> {
    stat5_model_with(n_stages, &STAT5_X0, NoisePolicy::default())
}

pub fn stat5_model_with(n_stages: usize, x0: &[f64], noise: NoisePolicy) -> Result<(ModelSpec, UncertaintySet)> {
    if n_stages < 1 {
        return Err(Error::invalid("n_stages", "STAT5 delay chain needs at least one stage"));
    }
    let base = ModelSpec::new(Arc::new(Stat5::default()), x0.to_vec(), noise)?;
    let model = delay_chain(&base, &[DelayRef { state: 2, tau: STAT5_TAU }], n_stages)?;
    let uset = UncertaintySet::new(
        vec![
            UncertainEntry { target: Target::Parameter(0), dist: STAT5_K1 },
            UncertainEntry { target: Target::Parameter(1), dist: STAT5_K2 },
        ],
        vec![STAT5_K1.mean(), STAT5_K2.mean()],
    )?;
    Ok((model, uset))
}

/// Linear combination of chained STAT5 states giving the noise-free `y₂`.
pub fn stat5_y2_coefficients(n_x: usize) -> Vec<f64> {
    let mut c = vec![0.0; n_x];
    c[..3].fill(STAT5_S2);
    c
}
