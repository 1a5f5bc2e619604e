use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Initial simplex edge, as a fraction of each box width (or of
    /// `max(|x|, 1)` for unbounded coordinates).
    pub initial_step: f64,
    /// Simplex size tolerance in the same scaled units.
    pub xtol: f64,
    /// Relative spread of objective values across the simplex.
    pub ftol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_iter: 400, initial_step: 0.25, xtol: 1e-6, ftol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Box for the simplex search; a coordinate with `lo == hi` is pinned.
pub type Bounds = [(f64, f64)];

fn clip(x: &mut [f64], bounds: Option<&Bounds>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Derivative-free simplex minimization. Every trial point is projected
/// onto `bounds` before evaluation; NaN objective values count as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], bounds: Option<&Bounds>, opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::invalid("x0", "nothing to optimize"));
    }
    if let Some(b) = bounds {
        if b.len() != n {
            return Err(Error::DimensionMismatch { what: "bounds", expected: n, got: b.len() });
        }
        if b.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::invalid("bounds", "each box must be finite with lo <= hi"));
        }
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x0"));
    }
    if !(opts.initial_step > 0.0) || opts.max_iter == 0 {
        return Err(Error::invalid("nelder_mead", "initial_step and max_iter must be positive"));
    }

    let scale: Vec<f64> = match bounds {
        Some(b) => b.iter().zip(x0).map(|(&(lo, hi), v)| if hi > lo { hi - lo } else { v.abs().max(1.0) }).collect(),
        None => x0.iter().map(|v| v.abs().max(1.0)).collect(),
    };
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    clip(&mut start, bounds);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = opts.initial_step * scale[i];
        v[i] += step;
        if let Some(b) = bounds {
            if v[i] > b[i].1 {
                v[i] = start[i] - step;
            }
        }
        clip(&mut v, bounds);
        simplex.push(v);
    }
    let mut fs: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    while iterations < opts.max_iter {
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];

        let spread = fs[worst] - fs[best];
        let diam = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).zip(&scale).map(|((a, b), s)| (a - b).abs() / s))
            .fold(0.0, f64::max);
        if fs[best].is_finite() && spread <= opts.ftol * (1.0 + fs[best].abs()) && diam <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for &k in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[k]) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect();
            clip(&mut p, bounds);
            p
        };

        // a clipped reflection landing on an existing vertex would collapse the
        // simplex, so it is treated as a failed step
        let xr = along(alpha);
        let fr = if simplex.contains(&xr) { f64::INFINITY } else { eval(&xr) };
        if fr < fs[best] {
            let xe = along(gamma);
            let fe = eval(&xe);
            if fe < fr {
                simplex[worst] = xe;
                fs[worst] = fe;
            } else {
                simplex[worst] = xr;
                fs[worst] = fr;
            }
            continue;
        }
        if fr < fs[second] {
            simplex[worst] = xr;
            fs[worst] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < fs[worst] {
            let xc = along(rho * alpha);
            let fc = if simplex.contains(&xc) { f64::INFINITY } else { eval(&xc) };
            (xc, fc, fc <= fr)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc, fc < fs[worst])
        };
        if accept {
            fs[worst] = fc;
            simplex[worst] = xc;
            continue;
        }
        let anchor = simplex[best].clone();
        for &k in &order[1..] {
            let mut p: Vec<f64> = anchor.iter().zip(&simplex[k]).map(|(a, v)| a + sigma * (v - a)).collect();
            clip(&mut p, bounds);
            fs[k] = eval(&p);
            simplex[k] = p;
        }
    }
    let best = (0..=n).min_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b))).unwrap_or(0);
    Ok(Minimum { x: simplex[best].clone(), f: fs[best], iterations, evaluations, converged })
}
