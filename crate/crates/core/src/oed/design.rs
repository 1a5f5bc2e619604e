use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::chance::ChanceConstraint;
use super::criterion::{criterion_value, Criterion};
use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::dynamics::{integrate, IntegratorOptions, ModelSpec, PiecewiseConstantInput};
use crate::error::{Error, Result};
use crate::models::{StandardMap, UncertaintySet};
use crate::pce::{CollocationPlan, NodeStrategy};
use crate::polynomials::MultiIndexBasis;

/// Corners of the input box are only screened up to this many levels.
const MAX_CORNER_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Iteration cap of each local simplex search.
    pub max_iter: usize,
    /// `ρ = penalty_weight · max(|J(centroid)|, 1)`.
    pub penalty_weight: f64,
    /// Number of local searches, started from the best screened points.
    pub restarts: usize,
    /// Seeded random points screened in addition to corners and centroid.
    pub random_starts: usize,
    pub seed: u64,
    pub initial_step: f64,
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 300,
            penalty_weight: 1e3,
            restarts: 3,
            random_starts: 8,
            seed: 0,
            initial_step: 0.25,
            xtol: 1e-4,
            ftol: 1e-9,
        }
    }
}

/// Moments and surrogate margins of one constraint target over its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMoments {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub margin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    /// `−E[Φ] + w·Var[Φ]`.
    pub j: f64,
    pub e_phi: f64,
    pub var_phi: f64,
    pub constraints: Vec<ConstraintMoments>,
}

impl ObjectiveValue {
    /// Sum of surrogate violations over all constraints and times.
    pub fn violation(&self) -> f64 {
        self.constraints.iter().flat_map(|c| &c.margin).map(|m| (-m).max(0.0)).sum()
    }

    pub fn min_margin(&self) -> f64 {
        self.constraints.iter().flat_map(|c| &c.margin).copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-time moments of every state, output and constraint target.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    /// `(mean, variance)` per state.
    pub states: Vec<(f64, f64)>,
    pub outputs: Vec<(f64, f64)>,
    /// `(mean, variance, margin)` per constraint.
    pub targets: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub levels: Vec<f64>,
    pub t_f: f64,
    pub bounds: (f64, f64),
    pub criterion: Criterion,
    pub w: f64,
    pub obj: f64,
    pub e_phi: f64,
    pub var_phi: f64,
    pub penalty_rho: f64,
    pub constraint_margins: Vec<ConstraintMoments>,
    pub feasible: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub local_searches: usize,
}

impl DesignResult {
    pub fn u_star(&self) -> Result<PiecewiseConstantInput> {
        PiecewiseConstantInput::new(self.levels.clone(), self.t_f, self.bounds)
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    /// No random dimension: one evaluation at the collapsed point.
    Dirac,
    Pce(CollocationPlan),
}

/// Robust design problem: maximize `E[Φ] − w·Var[Φ]` over the levels of a
/// piecewise-constant input subject to chance constraints.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    model: ModelSpec,
    uset: UncertaintySet,
    map: StandardMap,
    degree: usize,
    sampler: Sampler,
    template: PiecewiseConstantInput,
    criterion: Criterion,
    w: f64,
    constraints: Vec<ChanceConstraint>,
    solver: SolverOptions,
    integrator: IntegratorOptions,
    /// Report grid: `0`, `t_f` and every constraint time.
    grid: Vec<f64>,
    /// Positions of each constraint's times within `grid`.
    grid_index: Vec<Vec<usize>>,
}

fn same_time(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-12 * scale.max(1.0)
}

impl DesignProblem {
    pub fn new(
        model: ModelSpec,
        uset: UncertaintySet,
        degree: usize,
        template: PiecewiseConstantInput,
        criterion: Criterion,
        w: f64,
        constraints: Vec<ChanceConstraint>,
    ) -> Result<Self> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid("w", "variance weight must be finite and non-negative"));
        }
        if uset.base_theta().len() != model.n_theta() {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: model.n_theta(),
                got: uset.base_theta().len(),
            });
        }
        let t_f = template.t_f();
        for c in &constraints {
            c.validate()?;
            if c.coeffs.len() != model.n_x() {
                return Err(Error::DimensionMismatch {
                    what: "constraint coeffs",
                    expected: model.n_x(),
                    got: c.coeffs.len(),
                });
            }
            if c.grid.iter().any(|&t| t > t_f * (1.0 + 1e-12)) {
                return Err(Error::invalid("grid", "constraint time beyond the input horizon"));
            }
        }
        let mut grid: Vec<f64> =
            [0.0, t_f].into_iter().chain(constraints.iter().flat_map(|c| c.grid.iter().copied())).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| same_time(*a, *b, t_f));
        let grid_index = constraints
            .iter()
            .map(|c| c.grid.iter().map(|&t| grid.iter().position(|&g| same_time(g, t, t_f)).unwrap_or(0)).collect())
            .collect();
        let map = uset.to_standard(model.x0())?;
        let mut problem = DesignProblem {
            model,
            uset,
            map,
            degree,
            sampler: Sampler::Dirac,
            template,
            criterion,
            w,
            constraints,
            solver: SolverOptions::default(),
            integrator: IntegratorOptions::default(),
            grid,
            grid_index,
        };
        problem.set_strategy(NodeStrategy::TensorQuadrature)?;
        Ok(problem)
    }

    fn set_strategy(&mut self, strategy: NodeStrategy) -> Result<()> {
        self.sampler = if self.map.n_xi() == 0 {
            Sampler::Dirac
        } else {
            let basis = MultiIndexBasis::new(self.map.families().to_vec(), self.degree)?;
            Sampler::Pce(CollocationPlan::new(Arc::new(basis), strategy)?)
        };
        Ok(())
    }

    pub fn with_node_strategy(mut self, strategy: NodeStrategy) -> Result<Self> {
        self.set_strategy(strategy)?;
        Ok(self)
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Result<Self> {
        if !(solver.penalty_weight.is_finite() && solver.penalty_weight >= 0.0) {
            return Err(Error::invalid("penalty_weight", "must be finite and non-negative"));
        }
        if solver.restarts == 0 || solver.max_iter == 0 {
            return Err(Error::invalid("solver", "restarts and max_iter must be positive"));
        }
        self.solver = solver;
        Ok(self)
    }

    pub fn with_integrator(mut self, integrator: IntegratorOptions) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn uncertainty(&self) -> &UncertaintySet {
        &self.uset
    }

    pub fn template(&self) -> &PiecewiseConstantInput {
        &self.template
    }

    pub fn constraints(&self) -> &[ChanceConstraint] {
        &self.constraints
    }

    pub fn solver_options(&self) -> &SolverOptions {
        &self.solver
    }

    pub fn integrator_options(&self) -> &IntegratorOptions {
        &self.integrator
    }

    /// Number of collocation nodes (1 when there is no randomness).
    pub fn n_nodes(&self) -> usize {
        match &self.sampler {
            Sampler::Dirac => 1,
            Sampler::Pce(plan) => plan.len(),
        }
    }

    /// Mean and variance of every quantity returned by `eval(θ, x₀)`.
    pub fn moments<F>(&self, eval: F) -> Result<Vec<(f64, f64)>>
    where
        F: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync,
    {
        match &self.sampler {
            Sampler::Dirac => {
                let (theta, x0) = self.map.map(&[])?;
                Ok(eval(&theta, &x0)?.into_iter().map(|v| (v, 0.0)).collect())
            }
            Sampler::Pce(plan) => {
                let exps = plan.propagate(|xi| {
                    let (theta, x0) = self.map.map(xi)?;
                    eval(&theta, &x0)
                })?;
                Ok(exps.iter().map(|e| (e.mean(), e.variance())).collect())
            }
        }
    }

    fn input(&self, levels: &[f64]) -> Result<PiecewiseConstantInput> {
        if levels.len() != self.template.n_seg() {
            return Err(Error::DimensionMismatch {
                what: "levels",
                expected: self.template.n_seg(),
                got: levels.len(),
            });
        }
        PiecewiseConstantInput::new(levels.to_vec(), self.template.t_f(), self.template.bounds())
    }

    /// Robust objective and constraint moments at the given levels.
    pub fn robust_objective(&self, levels: &[f64]) -> Result<ObjectiveValue> {
        let input = self.input(levels)?;
        let last = self.grid.len() - 1;
        let values = self.moments(|theta, x0| {
            let traj = integrate(&self.model, &input, theta, x0, &self.grid, &self.integrator)?;
            let phi = criterion_value(&traj.states[last].fim, self.criterion)?;
            if !phi.is_finite() {
                return Err(Error::NonFinite("design criterion"));
            }
            let mut out = vec![phi];
            for (c, idx) in self.constraints.iter().zip(&self.grid_index) {
                out.extend(idx.iter().map(|&k| c.target(&traj.states[k].x)));
            }
            Ok(out)
        })?;
        let (e_phi, var_phi) = values[0];
        let mut rest = values[1..].iter();
        let constraints = self
            .constraints
            .iter()
            .map(|c| {
                let mut cm =
                    ConstraintMoments { times: c.grid.clone(), mean: vec![], variance: vec![], margin: vec![] };
                for _ in &c.grid {
                    let &(m, v) = rest.next().expect("one moment per constraint time");
                    cm.mean.push(m);
                    cm.variance.push(v);
                    cm.margin.push(c.margin(m, v)?);
                }
                Ok(cm)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectiveValue { j: -e_phi + self.w * var_phi, e_phi, var_phi, constraints })
    }

    /// Moments of all states, outputs and constraint targets on `grid`.
    pub fn moment_table(&self, input: &PiecewiseConstantInput, grid: &[f64]) -> Result<Vec<MomentRow>> {
        let (nx, ny) = (self.model.n_x(), self.model.n_y());
        let per_time = nx + ny + self.constraints.len();
        let values = self.moments(|theta, x0| {
            let traj = crate::dynamics::simulate(&self.model, input, theta, x0, grid, &self.integrator)?;
            let mut out = Vec::with_capacity(per_time * grid.len());
            for (x, y) in traj.states.iter().zip(&traj.outputs) {
                out.extend_from_slice(x);
                out.extend_from_slice(y);
                out.extend(self.constraints.iter().map(|c| c.target(x)));
            }
            Ok(out)
        })?;
        grid.iter()
            .zip(values.chunks(per_time))
            .map(|(&t, row)| {
                let targets = self
                    .constraints
                    .iter()
                    .zip(&row[nx + ny..])
                    .map(|(c, &(m, v))| Ok((m, v, c.margin(m, v)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MomentRow { t, states: row[..nx].to_vec(), outputs: row[nx..nx + ny].to_vec(), targets })
            })
            .collect()
    }

    fn start_points(&self) -> Vec<Vec<f64>> {
        let n = self.template.n_seg();
        let (lo, hi) = self.template.bounds();
        let mut starts = Vec::new();
        if n <= MAX_CORNER_DIM {
            for mask in 0..(1usize << n) {
                starts.push((0..n).map(|i| if mask >> i & 1 == 1 { hi } else { lo }).collect());
            }
        }
        starts.push(vec![0.5 * (lo + hi); n]);
        let mut rng = ChaCha8Rng::seed_from_u64(self.solver.seed);
        for _ in 0..self.solver.random_starts {
            starts.push((0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect());
        }
        starts
    }

    /// Multi-start penalized Nelder–Mead over the input levels.
    pub fn solve(&self) -> Result<DesignResult> {
        let n = self.template.n_seg();
        let (lo, hi) = self.template.bounds();
        if !(self.template.t_f() > 0.0) {
            return Err(Error::invalid("t_f", "horizon must be positive"));
        }
        let centroid = vec![0.5 * (lo + hi); n];
        let j_ref = self.robust_objective(&centroid).map(|v| v.j.abs()).unwrap_or(1.0);
        let rho = self.solver.penalty_weight * j_ref.max(1.0);

        let mut search = Search { problem: self, rho, evaluations: 0, best_feasible: None, best_any: None };
        let mut screened: Vec<(f64, usize, Vec<f64>)> =
            self.start_points().into_iter().enumerate().map(|(k, s)| (search.eval(&s), k, s)).collect();
        screened.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let bounds = vec![(lo, hi); n];
        let nm = NelderMeadOptions {
            max_iter: self.solver.max_iter,
            initial_step: self.solver.initial_step,
            xtol: self.solver.xtol,
            ftol: self.solver.ftol,
        };
        let mut iterations = 0;
        let mut local_searches = 0;
        for (_, _, start) in screened.iter().take(self.solver.restarts) {
            let found = nelder_mead(|x| search.eval(x), start, Some(&bounds), &nm)?;
            iterations += found.iterations;
            local_searches += 1;
            search.polish(&found.x);
        }

        let best = match (search.best_feasible.take(), search.best_any.take()) {
            (Some(f), _) => f,
            (None, Some(a)) if a.penalized.is_finite() => a,
            _ => return Err(Error::Solver("all restarts diverged".into())),
        };
        let feasible = best.value.min_margin() >= 0.0;
        Ok(DesignResult {
            levels: best.levels,
            t_f: self.template.t_f(),
            bounds: (lo, hi),
            criterion: self.criterion,
            w: self.w,
            obj: best.value.j,
            e_phi: best.value.e_phi,
            var_phi: best.value.var_phi,
            penalty_rho: rho,
            constraint_margins: best.value.constraints,
            feasible,
            iterations,
            evaluations: search.evaluations,
            local_searches,
        })
    }
}

struct Candidate {
    levels: Vec<f64>,
    value: ObjectiveValue,
    penalized: f64,
}

/// Penalized objective plus the incumbents seen so far.
struct Search<'a> {
    problem: &'a DesignProblem,
    rho: f64,
    evaluations: usize,
    best_feasible: Option<Candidate>,
    best_any: Option<Candidate>,
}

impl Search<'_> {
    fn eval(&mut self, levels: &[f64]) -> f64 {
        self.eval_full(levels).0
    }

    /// Penalized value and whether every surrogate margin is non-negative.
    fn eval_full(&mut self, levels: &[f64]) -> (f64, bool) {
        self.evaluations += 1;
        let Ok(value) = self.problem.robust_objective(levels) else {
            return (f64::INFINITY, false);
        };
        let penalized = value.j + self.rho * value.violation();
        if !penalized.is_finite() {
            return (f64::INFINITY, false);
        }
        let feasible = value.min_margin() >= 0.0;
        if feasible && self.best_feasible.as_ref().is_none_or(|b| value.j < b.value.j) {
            self.best_feasible = Some(Candidate { levels: levels.to_vec(), value: value.clone(), penalized });
        }
        if self.best_any.as_ref().is_none_or(|b| penalized < b.penalized) {
            self.best_any = Some(Candidate { levels: levels.to_vec(), value, penalized });
        }
        (penalized, feasible)
    }

    /// A simplex search on an exact penalty tends to stop a hair outside the
    /// feasible set; bisect back towards the feasible incumbent.
    fn polish(&mut self, x: &[f64]) {
        let Some(anchor) = self.best_feasible.as_ref().map(|c| c.levels.clone()) else {
            return;
        };
        let at = |t: f64| -> Vec<f64> { anchor.iter().zip(x).map(|(a, b)| a + t * (b - a)).collect() };
        if self.eval_full(x).1 {
            return;
        }
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..30 {
            let mid = 0.5 * (a + b);
            if self.eval_full(&at(mid)).1 {
                a = mid;
            } else {
                b = mid;
            }
        }
    }
}
