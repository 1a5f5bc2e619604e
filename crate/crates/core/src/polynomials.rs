//! Askey-scheme orthogonal polynomials, Gauss rules and tensorized
//! total-degree bases.
//!
//! Normalization is the classical ("standard") one and is *not* unit norm:
//!
//! * Legendre: `P_n(1) = 1`, weight uniform on `[-1, 1]`.
//! * Jacobi(a, b): Szegő normalization `P_n(1) = C(n + a, n)`, weight
//!   proportional to `(1 - x)^a (1 + x)^b` on `[-1, 1]`.
//! * Hermite: probabilists' `He_n` (monic), weight standard normal.
//!
//! Every weight is normalized to a probability density, so `E[Φ₀²] = 1`
//! and all squared norms are expectations under the standard variable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};

/// A univariate orthogonal polynomial family tied to a standard random variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolyFamily {
    Jacobi { a: f64, b: f64 },
    Legendre,
    Hermite,
}

impl PolyFamily {
    pub fn jacobi(a: f64, b: f64) -> Result<Self> {
        let fam = PolyFamily::Jacobi { a, b };
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        if let PolyFamily::Jacobi { a, b } = *self {
            if !(a.is_finite() && a > -1.0) {
                return Err(Error::invalid("jacobi.a", format!("must be > -1, got {a}")));
            }
            if !(b.is_finite() && b > -1.0) {
                return Err(Error::invalid("jacobi.b", format!("must be > -1, got {b}")));
            }
        }
        Ok(())
    }

    /// Closed support of the standard variable.
    pub fn support(&self) -> (f64, f64) {
        match self {
            PolyFamily::Hermite => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (-1.0, 1.0),
        }
    }

    /// Jacobi exponents, with Legendre as `(0, 0)`.
    fn jacobi_params(&self) -> Option<(f64, f64)> {
        match *self {
            PolyFamily::Jacobi { a, b } => Some((a, b)),
            PolyFamily::Legendre => Some((0.0, 0.0)),
            PolyFamily::Hermite => None,
        }
    }

    /// Value of the degree-`n` polynomial at `x` by three-term recurrence.
    pub fn eval(&self, n: usize, x: f64) -> f64 {
        match *self {
            PolyFamily::Legendre => {
                let (mut p0, mut p1) = (1.0, x);
                if n == 0 {
                    return p0;
                }
                for k in 1..n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                    p0 = p1;
                    p1 = p2;
                }
                p1
            }
            PolyFamily::Hermite => {
                let (mut p0, mut p1) = (1.0, x);
                if n == 0 {
                    return p0;
                }
                for k in 1..n {
                    let p2 = x * p1 - k as f64 * p0;
                    p0 = p1;
                    p1 = p2;
                }
                p1
            }
            PolyFamily::Jacobi { a, b } => {
                let mut p0 = 1.0;
                if n == 0 {
                    return p0;
                }
                let mut p1 = 0.5 * ((a + b + 2.0) * x + (a - b));
                for k in 1..n {
                    let kf = k as f64;
                    let s = 2.0 * kf + a + b;
                    let c1 = 2.0 * (kf + 1.0) * (kf + a + b + 1.0) * s;
                    let c2 = (s + 1.0) * ((s + 2.0) * s * x + a * a - b * b);
                    let c3 = 2.0 * (kf + a) * (kf + b) * (s + 2.0);
                    let p2 = (c2 * p1 - c3 * p0) / c1;
                    p0 = p1;
                    p1 = p2;
                }
                p1
            }
        }
    }

    /// Monic recurrence coefficients `(alpha_k, beta_k)` for `k = 0..n`, with
    /// `beta_0 = 1` (total mass of the probability weight).
    pub fn monic_recurrence(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let kf = k as f64;
                match self.jacobi_params() {
                    None => (0.0, if k == 0 { 1.0 } else { kf }),
                    Some((a, b)) => {
                        let s = 2.0 * kf + a + b;
                        let alpha = if k == 0 { (b - a) / (a + b + 2.0) } else { (b * b - a * a) / (s * (s + 2.0)) };
                        let beta = match k {
                            0 => 1.0,
                            1 => 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b)),
                            _ => 4.0 * kf * (kf + a) * (kf + b) * (kf + a + b) / (s * s * (s + 1.0) * (s - 1.0)),
                        };
                        (alpha, beta)
                    }
                }
            })
            .collect()
    }

    /// Probability density of the standard variable.
    pub fn pdf(&self, x: f64) -> f64 {
        match self.jacobi_params() {
            None => (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Some((a, b)) => {
                if !(-1.0..=1.0).contains(&x) {
                    return 0.0;
                }
                let log_norm = (a + b + 1.0) * std::f64::consts::LN_2 + ln_gamma(a + 1.0) + ln_gamma(b + 1.0)
                    - ln_gamma(a + b + 2.0);
                (1.0 - x).powf(a) * (1.0 + x).powf(b) * (-log_norm).exp()
            }
        }
    }

    /// Inverse CDF of the standard variable, `p ∈ (0, 1)`.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        match self.jacobi_params() {
            None => Normal::standard().inverse_cdf(p),
            Some((a, b)) => {
                // ξ = 2T − 1 with T ~ Beta(b + 1, a + 1)
                let beta = Beta::new(b + 1.0, a + 1.0).expect("validated jacobi parameters");
                2.0 * beta.inverse_cdf(p) - 1.0
            }
        }
    }

    /// `n`-point Gauss rule for this family's probability weight.
    pub fn gauss_rule(&self, n: usize) -> Result<QuadratureRule> {
        gauss_rule(*self, n)
    }
}

/// Nodes and probability weights of a Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix,
/// weights the squared first eigenvector components.
pub fn gauss_rule(family: PolyFamily, n: usize) -> Result<QuadratureRule> {
    family.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "quadrature needs at least one node"));
    }
    let rec = family.monic_recurrence(n);
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jm[(k, k)] = rec[k].0;
        if k + 1 < n {
            let off = rec[k + 1].1.sqrt();
            jm[(k, k + 1)] = off;
            jm[(k + 1, k)] = off;
        }
    }
    let eig = symmetric_eigen(&jm)?;
    let mut weights: Vec<f64> = (0..n).map(|k| eig.vectors[(0, k)].powi(2)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut nodes = eig.values;
    // symmetric weights give exactly symmetric nodes up to rounding
    nodes.iter_mut().filter(|x| x.abs() < 1e-15).for_each(|x| *x = 0.0);
    Ok(QuadratureRule { nodes, weights })
}

/// Full tensor grid of per-dimension Gauss rules, last dimension fastest.
pub fn tensor_rule(families: &[PolyFamily], n_per_dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let rules = families.iter().map(|f| gauss_rule(*f, n_per_dim)).collect::<Result<Vec<_>>>()?;
    let mut nodes = vec![Vec::new()];
    let mut weights = vec![1.0];
    for rule in &rules {
        let mut next_nodes = Vec::with_capacity(nodes.len() * rule.len());
        let mut next_weights = Vec::with_capacity(nodes.len() * rule.len());
        for (node, w) in nodes.iter().zip(&weights) {
            for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                let mut p = node.clone();
                p.push(*x);
                next_nodes.push(p);
                next_weights.push(w * wx);
            }
        }
        nodes = next_nodes;
        weights = next_weights;
    }
    Ok((nodes, weights))
}

/// Total-degree truncated tensor basis over independent standard variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexBasis {
    families: Vec<PolyFamily>,
    degree: usize,
    indices: Vec<Vec<usize>>,
    sq_norms: Vec<f64>,
}

/// Number of multi-indices of total degree ≤ m in n dimensions, `C(n + m, m)`.
pub fn basis_size(n_xi: usize, m: usize) -> usize {
    (1..=m).fold(1usize, |acc, k| acc * (n_xi + k) / k)
}

/// Multi-indices in graded-lexicographic order: by total degree, then with
/// larger leading exponents first, e.g. `(0,0), (1,0), (0,1), (2,0), …`.
fn graded_lex(n_xi: usize, m: usize) -> Vec<Vec<usize>> {
    fn fill(rem: usize, dims: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dims == 1 {
            prefix.push(rem);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for lead in (0..=rem).rev() {
            prefix.push(lead);
            fill(rem - lead, dims - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(basis_size(n_xi, m));
    for total in 0..=m {
        fill(total, n_xi, &mut Vec::with_capacity(n_xi), &mut out);
    }
    out
}

impl MultiIndexBasis {
    pub fn new(families: Vec<PolyFamily>, degree: usize) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::invalid("families", "need at least one random dimension"));
        }
        let n_xi = families.len();
        let indices = graded_lex(n_xi, degree);
        // (m+1)-point rules integrate the degree-2m products exactly
        let uni_norms = families
            .iter()
            .map(|fam| {
                let rule = gauss_rule(*fam, degree + 1)?;
                // the weight is a probability density, so E[P₀²] = 1 exactly
                Ok((0..=degree)
                    .map(|d| if d == 0 { 1.0 } else { rule.integrate(|x| fam.eval(d, x).powi(2)) })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let sq_norms =
            indices.iter().map(|alpha| alpha.iter().enumerate().map(|(dim, &d)| uni_norms[dim][d]).product()).collect();
        Ok(MultiIndexBasis { families, degree, indices, sq_norms })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_xi(&self) -> usize {
        self.families.len()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn families(&self) -> &[PolyFamily] {
        &self.families
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// `E[Φₖ²]` for each basis function.
    pub fn sq_norms(&self) -> &[f64] {
        &self.sq_norms
    }

    /// Values of all basis functions at `xi`.
    pub fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n_xi() {
            return Err(Error::DimensionMismatch { what: "xi", expected: self.n_xi(), got: xi.len() });
        }
        let uni: Vec<Vec<f64>> =
            self.families.iter().zip(xi).map(|(fam, &x)| (0..=self.degree).map(|d| fam.eval(d, x)).collect()).collect();
        Ok(self.indices.iter().map(|alpha| alpha.iter().enumerate().map(|(dim, &d)| uni[dim][d]).product()).collect())
    }
}
