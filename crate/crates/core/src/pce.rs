//! Polynomial chaos expansions fitted by probabilistic collocation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::polynomials::{tensor_rule, MultiIndexBasis, PolyFamily};

/// Smallest accepted reciprocal condition number of the scaled normal matrix.
const RCOND_MIN: f64 = 1e-12;

/// How collocation nodes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeStrategy {
    /// Tensor grid of `(m + 1)`-point Gauss rules, weighted by the quadrature weights.
    TensorQuadrature,
    /// `n_c` Halton points mapped through the inverse CDFs, uniformly weighted.
    LowDiscrepancy { n_c: usize },
}

/// Collocation nodes with a precomputed weighted least-squares projector.
#[derive(Debug, Clone)]
pub struct CollocationPlan {
    basis: Arc<MultiIndexBasis>,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    design: DMatrix<f64>,
    /// `(AᵀWA)⁻¹AᵀW`, maps node values to coefficients.
    projector: DMatrix<f64>,
}

fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn first_primes(n: usize) -> Vec<usize> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2;
    while primes.len() < n {
        if primes.iter().all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

impl CollocationPlan {
    pub fn new(basis: Arc<MultiIndexBasis>, strategy: NodeStrategy) -> Result<Self> {
        let families = basis.families().to_vec();
        let (nodes, weights) = match strategy {
            NodeStrategy::TensorQuadrature => tensor_rule(&families, basis.degree() + 1)?,
            NodeStrategy::LowDiscrepancy { n_c } => {
                if n_c < basis.len() {
                    return Err(Error::invalid(
                        "n_c",
                        format!("{n_c} collocation points cannot determine {} coefficients", basis.len()),
                    ));
                }
                let primes = first_primes(families.len());
                let nodes = (1..=n_c)
                    .map(|i| families.iter().zip(&primes).map(|(fam, &p)| fam.inverse_cdf(halton(i, p))).collect())
                    .collect();
                (nodes, vec![1.0 / n_c as f64; n_c])
            }
        };
        Self::from_nodes(basis, nodes, weights)
    }

    /// Plan over explicit nodes and positive regression weights.
    pub fn from_nodes(basis: Arc<MultiIndexBasis>, nodes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let n_c = nodes.len();
        let n_b = basis.len();
        if n_c < n_b {
            return Err(Error::invalid("n_c", format!("{n_c} collocation points cannot determine {n_b} coefficients")));
        }
        if weights.len() != n_c {
            return Err(Error::DimensionMismatch { what: "collocation weights", expected: n_c, got: weights.len() });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("weights", "regression weights must be positive"));
        }
        for node in &nodes {
            let density: f64 = basis.families().iter().zip(node).map(|(f, &x)| f.pdf(x)).product();
            if !(density > 0.0) {
                return Err(Error::invalid("nodes", format!("node {node:?} has zero probability density")));
            }
        }
        let mut design = DMatrix::zeros(n_c, n_b);
        for (r, node) in nodes.iter().enumerate() {
            for (c, v) in basis.eval(node)?.into_iter().enumerate() {
                design[(r, c)] = v;
            }
        }
        let mut weighted_t = design.transpose();
        for (c, w) in weights.iter().enumerate() {
            weighted_t.column_mut(c).scale_mut(*w);
        }
        let normal = &weighted_t * &design;
        // Jacobi scaling before the conditioning check
        let d: Vec<f64> = (0..n_b).map(|i| normal[(i, i)].sqrt()).collect();
        if d.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::RankDeficient { rcond: 0.0 });
        }
        let scaled = DMatrix::from_fn(n_b, n_b, |i, j| normal[(i, j)] / (d[i] * d[j]));
        let eig = symmetric_eigen(&scaled)?;
        let rcond = eig.values[0] / eig.values[n_b - 1];
        if !(rcond > RCOND_MIN) {
            return Err(Error::RankDeficient { rcond });
        }
        let chol = normal.cholesky().ok_or(Error::RankDeficient { rcond })?;
        let projector = chol.solve(&weighted_t);
        Ok(CollocationPlan { basis, nodes, weights, design, projector })
    }

    pub fn basis(&self) -> &Arc<MultiIndexBasis> {
        &self.basis
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weighted least-squares coefficients for values observed at the nodes.
    pub fn fit(&self, values: &[f64]) -> Result<PceExpansion> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "collocation values",
                expected: self.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("collocation values"));
        }
        let coeffs = &self.projector * DVector::from_column_slice(values);
        Ok(PceExpansion { coeffs: coeffs.iter().copied().collect(), basis: Arc::clone(&self.basis) })
    }

    /// Evaluates `evaluator` at every node (in parallel) and fits one
    /// expansion per returned quantity.
    pub fn propagate<F>(&self, evaluator: F) -> Result<Vec<PceExpansion>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let outputs = self
            .nodes
            .par_iter()
            .map(|xi| evaluator(xi).map_err(|e| Error::NodeFailure { xi: xi.clone(), source: Box::new(e) }))
            .collect::<Result<Vec<_>>>()?;
        let q = outputs.first().map_or(0, Vec::len);
        if let Some(bad) = outputs.iter().find(|o| o.len() != q) {
            return Err(Error::DimensionMismatch { what: "evaluator outputs", expected: q, got: bad.len() });
        }
        let mut values = vec![0.0; self.len()];
        (0..q)
            .map(|k| {
                for (v, out) in values.iter_mut().zip(&outputs) {
                    *v = out[k];
                }
                self.fit(&values)
            })
            .collect()
    }
}

/// Truncated expansion `Σ aₖ Φₖ(ξ)` of a scalar stochastic quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct PceExpansion {
    coeffs: Vec<f64>,
    basis: Arc<MultiIndexBasis>,
}

impl PceExpansion {
    pub fn new(basis: Arc<MultiIndexBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch { what: "coefficients", expected: basis.len(), got: coeffs.len() });
        }
        Ok(PceExpansion { coeffs, basis })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> &Arc<MultiIndexBasis> {
        &self.basis
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn variance(&self) -> f64 {
        self.coeffs.iter().zip(self.basis.sq_norms()).skip(1).map(|(a, s)| a * a * s).sum()
    }

    pub fn eval(&self, xi: &[f64]) -> Result<f64> {
        Ok(self.basis.eval(xi)?.iter().zip(&self.coeffs).map(|(p, a)| p * a).sum())
    }
}

#[derive(Serialize, Deserialize)]
struct BasisDescriptor {
    families: Vec<PolyFamily>,
    degree: usize,
}

#[derive(Serialize, Deserialize)]
struct ExpansionRepr {
    basis_descriptor: BasisDescriptor,
    coeffs: Vec<f64>,
}

impl Serialize for PceExpansion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ExpansionRepr {
            basis_descriptor: BasisDescriptor { families: self.basis.families().to_vec(), degree: self.basis.degree() },
            coeffs: self.coeffs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PceExpansion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ExpansionRepr::deserialize(d)?;
        let basis = MultiIndexBasis::new(repr.basis_descriptor.families, repr.basis_descriptor.degree)
            .map_err(serde::de::Error::custom)?;
        PceExpansion::new(Arc::new(basis), repr.coeffs).map_err(serde::de::Error::custom)
    }
}
