//! Monte Carlo validation: re-simulate under sampled parameters, add
//! measurement noise, re-estimate by weighted least squares and collect
//! error and constraint-satisfaction statistics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, uniform_grid, IntegratorOptions, ModelSpec, NoisePolicy, PiecewiseConstantInput};
use crate::error::{Error, Result};
use crate::fmt::num;
use crate::models::UncertaintySet;
use crate::oed::{nelder_mead, ChanceConstraint, NelderMeadOptions};

/// Starting point of the estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Prior means, i.e. what is known before the experiment.
    #[default]
    Mean,
    /// The run's true parameters (useful for checks only).
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    pub init: InitPolicy,
    pub max_iter: usize,
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { init: InitPolicy::Mean, max_iter: 500, xtol: 1e-7, ftol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_runs: usize,
    pub seed: u64,
    /// Measurement times.
    pub grid: Vec<f64>,
    /// Noise used for synthetic data and WLS weights; `None` uses the model's.
    pub noise: Option<NoisePolicy>,
    /// Multiplies the synthetic noise draws; weights are unaffected.
    pub noise_scale: f64,
    pub estimator: EstimatorOptions,
    pub integrator: IntegratorOptions,
    /// Quantity whose satisfaction is counted (`b · cᵀx < x_max` at every grid time).
    pub check: Option<ChanceConstraint>,
    pub probe_time: f64,
    pub histogram_bins: usize,
}

impl McConfig {
    /// Defaults for a horizon `t_f`: 1000 runs, unit-spaced measurements,
    /// histogram probe at `t_f`.
    pub fn new(t_f: f64, seed: u64) -> Result<Self> {
        Ok(McConfig {
            n_runs: 1000,
            seed,
            grid: uniform_grid(t_f, 1.0)?,
            noise: None,
            noise_scale: 1.0,
            estimator: EstimatorOptions::default(),
            integrator: IntegratorOptions::default(),
            check: None,
            probe_time: t_f,
            histogram_bins: 30,
        })
    }

    fn validate(&self, t_f: f64, n_y: usize) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs", "need at least one run"));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid", "measurement grid must be non-empty and strictly increasing"));
        }
        if self.grid[0] < 0.0 || self.grid[self.grid.len() - 1] > t_f * (1.0 + 1e-12) {
            return Err(Error::invalid("grid", "measurement grid must lie within the horizon"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale", "must be finite and non-negative"));
        }
        if !(self.probe_time >= 0.0 && self.probe_time <= t_f * (1.0 + 1e-12)) {
            return Err(Error::invalid("probe_time", "must lie within the horizon"));
        }
        if self.histogram_bins == 0 {
            return Err(Error::invalid("histogram_bins", "need at least one bin"));
        }
        if let Some(n) = &self.noise {
            n.validate(n_y)?;
        }
        if let Some(c) = &self.check {
            c.validate()?;
            if c.grid.iter().any(|&t| t > t_f * (1.0 + 1e-12)) {
                return Err(Error::invalid("check.grid", "check times must lie within the horizon"));
            }
        }
        Ok(())
    }
}

/// Noisy outputs with their standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn with_origin(times: &[f64]) -> (Vec<f64>, usize) {
    if times.first() == Some(&0.0) {
        (times.to_vec(), 0)
    } else {
        (std::iter::once(0.0).chain(times.iter().copied()).collect(), 1)
    }
}

/// Weighted least-squares fit of the parameters whose bounds are not
/// pinned (`lo < hi`); the rest stay at `theta_init`.
#[allow(clippy::too_many_arguments)]
pub fn wls_estimate(
    model: &ModelSpec,
    input: &PiecewiseConstantInput,
    x0: &[f64],
    data: &Measurements,
    theta_init: &[f64],
    bounds: &[(f64, f64)],
    opts: &EstimatorOptions,
    integrator: &IntegratorOptions,
) -> Result<WlsFit> {
    let np = model.n_theta();
    if theta_init.len() != np || bounds.len() != np {
        return Err(Error::DimensionMismatch { what: "theta", expected: np, got: theta_init.len().min(bounds.len()) });
    }
    if data.values.len() != data.times.len() || data.sigma.len() != data.times.len() {
        return Err(Error::DimensionMismatch {
            what: "measurements",
            expected: data.times.len(),
            got: data.values.len(),
        });
    }
    let (grid, skip) = with_origin(&data.times);
    let free: Vec<usize> = (0..np).filter(|&i| bounds[i].1 > bounds[i].0).collect();

    let assemble = |z: &[f64]| {
        let mut theta = theta_init.to_vec();
        for (&i, &v) in free.iter().zip(z) {
            theta[i] = v;
        }
        theta
    };
    let cost = |theta: &[f64]| -> f64 {
        let Ok(traj) = simulate(model, input, theta, x0, &grid, integrator) else {
            return f64::INFINITY;
        };
        let mut acc = 0.0;
        for ((y, meas), sig) in traj.outputs[skip..].iter().zip(&data.values).zip(&data.sigma) {
            for ((a, b), s) in y.iter().zip(meas).zip(sig) {
                let r = (a - b) / s;
                acc += r * r;
            }
        }
        acc
    };

    let start = cost(theta_init);
    if !start.is_finite() {
        return Err(Error::NonFinite("WLS objective at the initial guess"));
    }
    if free.is_empty() {
        return Ok(WlsFit { theta: theta_init.to_vec(), objective: start, iterations: 0, converged: true });
    }
    let z0: Vec<f64> = free.iter().map(|&i| theta_init[i]).collect();
    let zb: Vec<(f64, f64)> = free.iter().map(|&i| bounds[i]).collect();
    let nm = NelderMeadOptions { max_iter: opts.max_iter, initial_step: 0.1, xtol: opts.xtol, ftol: opts.ftol };
    let m = nelder_mead(|z| cost(&assemble(z)), &z0, Some(&zb), &nm)?;
    Ok(WlsFit {
        theta: assemble(&m.x),
        objective: m.f,
        iterations: m.iterations,
        converged: m.converged && m.f.is_finite(),
    })
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index` under `master`.
pub fn run_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRun {
    pub index: usize,
    pub theta_true: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub rel_err: Vec<f64>,
    /// Minimum of the checked quantity over its grid (`NaN` without a check).
    pub min_target: f64,
    pub probe_value: f64,
    pub satisfied: bool,
    pub diverged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_runs: usize,
    pub n_diverged: usize,
    pub avg_rel_err: Vec<f64>,
    pub max_rel_err: Vec<f64>,
    pub satisfaction: f64,
    pub probe_time: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub runs: Vec<McRun>,
    pub summary: McSummary,
    pub histogram: Histogram,
}

fn index_of(grid: &[f64], t: f64) -> usize {
    grid.iter().position(|&g| (g - t).abs() <= 1e-12 * t.abs().max(1.0)).unwrap_or(0)
}

/// Monte Carlo re-estimation under `input`. With a fixed seed the sampled
/// true parameters and noise draws depend only on the run index, so two
/// designs validated with the same seed see identical realizations.
pub fn run_mc(
    model: &ModelSpec,
    uset: &UncertaintySet,
    input: &PiecewiseConstantInput,
    cfg: &McConfig,
) -> Result<McReport> {
    cfg.validate(input.t_f(), model.n_y())?;
    if let Some(c) = &cfg.check {
        if c.coeffs.len() != model.n_x() {
            return Err(Error::DimensionMismatch { what: "check coeffs", expected: model.n_x(), got: c.coeffs.len() });
        }
    }
    let noise = cfg.noise.clone().unwrap_or_else(|| model.noise().clone());
    let check_grid: &[f64] = cfg.check.as_ref().map_or(&[], |c| &c.grid);
    let mut sim_grid: Vec<f64> = [0.0, cfg.probe_time].iter().chain(&cfg.grid).chain(check_grid).copied().collect();
    sim_grid.sort_by(f64::total_cmp);
    sim_grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let meas_idx: Vec<usize> = cfg.grid.iter().map(|&t| index_of(&sim_grid, t)).collect();
    let check_idx: Vec<usize> = check_grid.iter().map(|&t| index_of(&sim_grid, t)).collect();
    let probe_idx = index_of(&sim_grid, cfg.probe_time);
    let theta_mean = uset.mean_theta();
    let bounds = uset.theta_bounds();

    let run = |r: usize| -> Result<McRun> {
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed(cfg.seed, r));
        let (theta_true, x0) = uset.sample(&mut rng, model.x0())?;
        let traj = simulate(model, input, &theta_true, &x0, &sim_grid, &cfg.integrator)?;

        let mut data = Measurements { times: cfg.grid.clone(), values: Vec::new(), sigma: Vec::new() };
        for &k in &meas_idx {
            let mut vals = Vec::with_capacity(model.n_y());
            let mut sig = Vec::with_capacity(model.n_y());
            for (i, &y) in traj.outputs[k].iter().enumerate() {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let v = y + cfg.noise_scale * noise.sigma(i, y) * eps;
                vals.push(v);
                sig.push(noise.sigma(i, v));
            }
            data.values.push(vals);
            data.sigma.push(sig);
        }

        let init = match cfg.estimator.init {
            InitPolicy::Mean => theta_mean.clone(),
            InitPolicy::Truth => theta_true.clone(),
        };
        let (theta_hat, diverged, iterations) =
            match wls_estimate(model, input, &x0, &data, &init, &bounds, &cfg.estimator, &cfg.integrator) {
                Ok(fit) => (fit.theta, !fit.converged, fit.iterations),
                Err(_) => (vec![f64::NAN; theta_true.len()], true, 0),
            };
        let rel_err = theta_hat.iter().zip(&theta_true).map(|(h, t)| (h - t).abs() / t.abs()).collect();

        let (min_target, probe_value, satisfied) = match &cfg.check {
            Some(c) => {
                let vals: Vec<f64> = check_idx.iter().map(|&k| c.target(&traj.states[k])).collect();
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                (min, c.target(&traj.states[probe_idx]), vals.iter().all(|&v| c.holds(v)))
            }
            None => (f64::NAN, f64::NAN, true),
        };
        Ok(McRun { index: r, theta_true, theta_hat, rel_err, min_target, probe_value, satisfied, diverged, iterations })
    };
    let runs = (0..cfg.n_runs).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;

    let np = model.n_theta();
    let ok: Vec<&McRun> = runs.iter().filter(|r| !r.diverged).collect();
    let mut avg = vec![f64::NAN; np];
    let mut max = vec![f64::NAN; np];
    if !ok.is_empty() {
        for i in 0..np {
            avg[i] = ok.iter().map(|r| r.rel_err[i]).sum::<f64>() / ok.len() as f64;
            max[i] = ok.iter().map(|r| r.rel_err[i]).fold(0.0, f64::max);
        }
    }
    let satisfaction = runs.iter().filter(|r| r.satisfied).count() as f64 / runs.len() as f64;
    let probes: Vec<f64> = runs.iter().map(|r| r.probe_value).filter(|v| v.is_finite()).collect();
    let histogram = histogram(&probes, cfg.histogram_bins);
    let summary = McSummary {
        n_runs: runs.len(),
        n_diverged: runs.len() - ok.len(),
        avg_rel_err: avg,
        max_rel_err: max,
        satisfaction,
        probe_time: cfg.probe_time,
        seed: cfg.seed,
    };
    Ok(McReport { runs, summary, histogram })
}

/// Equal-width bins spanning the data range.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    if values.is_empty() || bins == 0 {
        return Histogram { edges: vec![], counts: vec![] };
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + lo.abs().max(1.0) * 1e-9;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

impl McReport {
    /// One row per run.
    pub fn write_runs_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let np = self.runs.first().map_or(0, |r| r.theta_true.len());
        let mut header = vec!["run".to_string()];
        for prefix in ["theta_true", "theta_hat", "rel_err"] {
            header.extend((1..=np).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(["min_target", "probe_value", "satisfied", "diverged"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.runs {
            let mut row = vec![r.index.to_string()];
            row.extend(r.theta_true.iter().chain(&r.theta_hat).chain(&r.rel_err).map(|&v| num(v)));
            row.push(num(r.min_target));
            row.push(num(r.probe_value));
            row.push(u8::from(r.satisfied).to_string());
            row.push(u8::from(r.diverged).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lo,hi,count")?;
        for (k, c) in self.histogram.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", num(self.histogram.edges[k]), num(self.histogram.edges[k + 1]), c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterComparison {
    pub avg_standard: f64,
    pub avg_robust: f64,
    /// `avg_standard / avg_robust`; above 1 favours the robust design.
    pub avg_ratio: f64,
    pub max_standard: f64,
    pub max_robust: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub parameters: Vec<ParameterComparison>,
    pub satisfaction_standard: f64,
    pub satisfaction_robust: f64,
    /// `satisfaction_robust / satisfaction_standard`.
    pub satisfaction_ratio: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else {
        num / den
    }
}

/// Side-by-side statistics of two reports built from the same realizations.
pub fn compare_designs(standard: &McReport, robust: &McReport) -> Result<Comparison> {
    if standard.runs.len() != robust.runs.len() {
        return Err(Error::DimensionMismatch {
            what: "Monte Carlo runs",
            expected: standard.runs.len(),
            got: robust.runs.len(),
        });
    }
    if standard.runs.iter().zip(&robust.runs).any(|(a, b)| a.theta_true != b.theta_true) {
        return Err(Error::invalid("reports", "runs are not paired: true parameters differ"));
    }
    let (s, r) = (&standard.summary, &robust.summary);
    let parameters = (0..s.avg_rel_err.len())
        .map(|i| ParameterComparison {
            avg_standard: s.avg_rel_err[i],
            avg_robust: r.avg_rel_err[i],
            avg_ratio: ratio(s.avg_rel_err[i], r.avg_rel_err[i]),
            max_standard: s.max_rel_err[i],
            max_robust: r.max_rel_err[i],
            max_ratio: ratio(s.max_rel_err[i], r.max_rel_err[i]),
        })
        .collect();
    Ok(Comparison {
        parameters,
        satisfaction_standard: s.satisfaction,
        satisfaction_robust: r.satisfaction,
        satisfaction_ratio: ratio(r.satisfaction, s.satisfaction),
    })
}
