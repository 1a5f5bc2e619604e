use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::{Dynamics, ModelSpec};
use crate::error::{Error, Result};

/// Delayed argument `x_state(t − tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRef {
    pub state: usize,
    pub tau: f64,
}

/// Base model whose delayed arguments are fed by linear chains of
/// `n_stages` first-order stages, `żᵢ = (N/τ)(zᵢ₋₁ − zᵢ)` with `z₀ = x_j`.
///
/// State layout: base states first, then each chain's stages in order.
struct DelayChain {
    base: Arc<dyn Dynamics>,
    refs: Vec<DelayRef>,
    n_stages: usize,
}

impl DelayChain {
    fn nb(&self) -> usize {
        self.base.n_x()
    }

    fn stage(&self, chain: usize, i: usize) -> usize {
        self.nb() + chain * self.n_stages + i
    }

    fn delayed(&self, x: &[f64]) -> Vec<f64> {
        (0..self.refs.len()).map(|c| x[self.stage(c, self.n_stages - 1)]).collect()
    }
}

impl Dynamics for DelayChain {
    fn n_x(&self) -> usize {
        self.nb() + self.refs.len() * self.n_stages
    }

    fn n_theta(&self) -> usize {
        self.base.n_theta()
    }

    fn n_y(&self) -> usize {
        self.base.n_y()
    }

    fn rhs(&self, x: &[f64], _xd: &[f64], u: f64, theta: &[f64], dx: &mut [f64]) {
        let nb = self.nb();
        let xd = self.delayed(x);
        self.base.rhs(&x[..nb], &xd, u, theta, &mut dx[..nb]);
        for (c, r) in self.refs.iter().enumerate() {
            let rate = self.n_stages as f64 / r.tau;
            let mut prev = x[r.state];
            for i in 0..self.n_stages {
                let k = self.stage(c, i);
                dx[k] = rate * (prev - x[k]);
                prev = x[k];
            }
        }
    }

    fn output(&self, x: &[f64], y: &mut [f64]) {
        self.base.output(&x[..self.nb()], y);
    }

    fn jac_x(&self, x: &[f64], _xd: &[f64], u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        let nb = self.nb();
        let xd = self.delayed(x);
        out.fill(0.0);
        let mut jb = DMatrix::zeros(nb, nb);
        self.base.jac_x(&x[..nb], &xd, u, theta, &mut jb);
        out.view_mut((0, 0), (nb, nb)).copy_from(&jb);
        let mut jd = DMatrix::zeros(nb, self.refs.len());
        self.base.jac_xd(&x[..nb], &xd, u, theta, &mut jd);
        for (c, r) in self.refs.iter().enumerate() {
            let last = self.stage(c, self.n_stages - 1);
            for i in 0..nb {
                out[(i, last)] += jd[(i, c)];
            }
            let rate = self.n_stages as f64 / r.tau;
            let mut prev = r.state;
            for i in 0..self.n_stages {
                let k = self.stage(c, i);
                out[(k, prev)] += rate;
                out[(k, k)] -= rate;
                prev = k;
            }
        }
    }

    fn jac_theta(&self, x: &[f64], _xd: &[f64], u: f64, theta: &[f64], out: &mut DMatrix<f64>) {
        let nb = self.nb();
        let xd = self.delayed(x);
        out.fill(0.0);
        let mut jt = DMatrix::zeros(nb, self.n_theta());
        self.base.jac_theta(&x[..nb], &xd, u, theta, &mut jt);
        out.view_mut((0, 0), (nb, self.n_theta())).copy_from(&jt);
    }

    fn jac_output(&self, x: &[f64], out: &mut DMatrix<f64>) {
        let nb = self.nb();
        out.fill(0.0);
        let mut jh = DMatrix::zeros(self.n_y(), nb);
        self.base.jac_output(&x[..nb], &mut jh);
        out.view_mut((0, 0), (self.n_y(), nb)).copy_from(&jh);
    }

    fn sensitivity_rhs(&self, x: &[f64], u: f64, theta: &[f64], s: &DMatrix<f64>, ds: &mut DMatrix<f64>) {
        // block structure: base rows see base states and the last stage of
        // each chain, chain rows are a bidiagonal shift
        let nb = self.nb();
        let np = self.n_theta();
        let nd = self.refs.len();
        let xd = self.delayed(x);
        let mut jb = DMatrix::zeros(nb, nb);
        let mut jd = DMatrix::zeros(nb, nd);
        let mut jt = DMatrix::zeros(nb, np);
        self.base.jac_x(&x[..nb], &xd, u, theta, &mut jb);
        self.base.jac_xd(&x[..nb], &xd, u, theta, &mut jd);
        self.base.jac_theta(&x[..nb], &xd, u, theta, &mut jt);
        for p in 0..np {
            for i in 0..nb {
                let mut acc = jt[(i, p)];
                for j in 0..nb {
                    acc += jb[(i, j)] * s[(j, p)];
                }
                for c in 0..nd {
                    acc += jd[(i, c)] * s[(self.stage(c, self.n_stages - 1), p)];
                }
                ds[(i, p)] = acc;
            }
            for (c, r) in self.refs.iter().enumerate() {
                let rate = self.n_stages as f64 / r.tau;
                let mut prev = s[(r.state, p)];
                for i in 0..self.n_stages {
                    let k = self.stage(c, i);
                    ds[(k, p)] = rate * (prev - s[(k, p)]);
                    prev = s[(k, p)];
                }
            }
        }
    }
}

/// Replaces each delayed argument slot of `model` by the final stage of a
/// linear chain fed by `refs[slot].state`. Chain stages start at the fed
/// state's initial value, i.e. constant pre-history.
pub fn delay_chain(model: &ModelSpec, refs: &[DelayRef], n_stages: usize) -> Result<ModelSpec> {
    if n_stages == 0 {
        return Err(Error::invalid("n_stages", "delay chain needs at least one stage"));
    }
    let base = Arc::clone(model.dynamics());
    if refs.len() != base.n_delayed() {
        return Err(Error::DimensionMismatch {
            what: "delayed references",
            expected: base.n_delayed(),
            got: refs.len(),
        });
    }
    for r in refs {
        if !(r.tau.is_finite() && r.tau > 0.0) {
            return Err(Error::invalid("tau", format!("delay must be positive, got {}", r.tau)));
        }
        if r.state >= base.n_x() {
            return Err(Error::invalid("state", format!("delayed state index {} out of range", r.state)));
        }
    }
    let chain = DelayChain { base, refs: refs.to_vec(), n_stages };
    let mut x0 = model.x0().to_vec();
    for r in refs {
        x0.extend(std::iter::repeat_n(model.x0()[r.state], n_stages));
    }
    let s0_base = model.initial_sensitivity();
    let n_x = chain.n_x();
    let n_theta = chain.n_theta();
    let mut s0 = DMatrix::zeros(n_x, n_theta);
    s0.view_mut((0, 0), s0_base.shape()).copy_from(&s0_base);
    for (c, r) in refs.iter().enumerate() {
        for i in 0..n_stages {
            let k = chain.stage(c, i);
            s0.row_mut(k).copy_from(&s0_base.row(r.state));
        }
    }
    ModelSpec::new(Arc::new(chain), x0, model.noise().clone())?.with_initial_sensitivity(s0)
}
