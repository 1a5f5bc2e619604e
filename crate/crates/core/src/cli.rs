//! Batch front end: JSON run configs, the `design` / `validate` /
//! `propagate` pipelines and their CSV/JSON artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynamics::{uniform_grid, IntegratorOptions, ModelSpec, NoisePolicy, PiecewiseConstantInput, DEFAULT_STEP};
use crate::error::Error;
use crate::fmt::num;
use crate::models::{stat5_model_with, UncertainEntry, UncertaintySet, STAT5_DEFAULT_STAGES, STAT5_X0};
use crate::oed::{ChanceConstraint, Criterion, DesignProblem, SolverOptions};
use crate::pce::NodeStrategy;
use crate::polynomials::basis_size;
use crate::validate::{run_mc, EstimatorOptions, McConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "roed",
    version,
    about = "Robust optimal experiment design with polynomial chaos and chance constraints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the input levels; writes design.json and input.csv.
    Design(CommonArgs),
    /// Monte Carlo re-estimation under an input; writes runs.csv, summary.json, histogram.csv.
    Validate(InputArgs),
    /// PCE moments of states, outputs and constraint margins under an input; writes moments.csv.
    Propagate(InputArgs),
    /// Prints the JSON schema of the run configuration.
    Schema,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input profile CSV with columns `t,u`.
    #[arg(long)]
    pub input: PathBuf,
}

fn default_stages() -> usize {
    STAT5_DEFAULT_STAGES
}
fn default_degree() -> usize {
    4
}
fn default_n_seg() -> usize {
    5
}
fn default_bounds() -> (f64, f64) {
    (0.0, 1.0)
}
fn default_w() -> f64 {
    1e-2
}
fn default_dt() -> f64 {
    1.0
}
fn default_runs() -> usize {
    1000
}
fn default_bins() -> usize {
    30
}
fn default_one() -> f64 {
    1.0
}
fn default_step() -> f64 {
    DEFAULT_STEP
}

/// Top-level run configuration. Unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub pce: PceConfig,
    pub input: InputConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub propagate: PropagateConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_stages")]
    pub n_stages: usize,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: Option<NoisePolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Replace every distribution by a Dirac at its mean (nominal design and
    /// propagation). Validation still samples the full prior.
    #[serde(default)]
    pub collapse_to_means: bool,
    /// Entries replacing the model's prior for the same target, or added.
    #[serde(default)]
    pub overrides: Vec<UncertainEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PceConfig {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_nodes")]
    pub nodes: NodeStrategy,
}

fn default_nodes() -> NodeStrategy {
    NodeStrategy::TensorQuadrature
}

impl Default for PceConfig {
    fn default() -> Self {
        PceConfig { degree: default_degree(), nodes: default_nodes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default = "default_n_seg")]
    pub n_seg: usize,
    pub t_f: f64,
    #[serde(default = "default_bounds")]
    pub bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_step")]
    pub max_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { max_step: DEFAULT_STEP }
    }
}

/// What a constraint acts on. Output targets require an output that is
/// linear in the states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    State { index: usize },
    Output { index: usize },
    Coeffs { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub target: TargetConfig,
    pub b: f64,
    pub x_max: f64,
    pub beta: f64,
    /// Explicit enforcement times; otherwise a uniform grid of `grid_dt`.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_dt")]
    pub grid_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig { criterion: Criterion::E, w: default_w(), constraints: vec![], solver: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_dt")]
    pub grid_dt: f64,
    #[serde(default = "default_one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    /// Quantity counted for constraint satisfaction; defaults to the first
    /// design constraint.
    #[serde(default)]
    pub check: Option<ConstraintConfig>,
    /// Histogram time; defaults to the horizon.
    #[serde(default)]
    pub probe_time: Option<f64>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            n_runs: default_runs(),
            grid: None,
            grid_dt: default_dt(),
            noise_scale: 1.0,
            estimator: EstimatorOptions::default(),
            check: None,
            probe_time: None,
            histogram_bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PropagateConfig {
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_dt")]
    pub grid_dt: f64,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        PropagateConfig { grid: None, grid_dt: default_dt() }
    }
}

/// Failure reported by the CLI, serialized as the error JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    /// Dotted config path of the offending field, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError { kind: "config", field: Some(field.into()), message: message.into() }
    }

    fn compute(e: Error) -> Self {
        CliError { kind: "compute", field: None, message: e.to_string() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError { kind: "io", field: None, message: format!("{}: {e}", path.display()) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "error": self })).unwrap_or_else(|_| self.message.clone())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses a config, reporting the path of the first offending key.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

fn check(ok: bool, field: impl Into<String>, message: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(field, message))
    }
}

fn in_field<T>(field: String, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::config(field, e.to_string()))
}

/// Everything derived from a validated config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub model: ModelSpec,
    /// Uncertainty seen by design and propagation.
    pub uset: UncertaintySet,
    /// Prior the validation draws true parameters from, never collapsed.
    pub prior: UncertaintySet,
    pub template: PiecewiseConstantInput,
    pub integrator: IntegratorOptions,
    pub constraints: Vec<ChanceConstraint>,
    pub check: Option<ChanceConstraint>,
}

impl Prepared {
    /// Validates every field against the library preconditions before any
    /// heavy computation.
    pub fn new(config: RunConfig) -> CliResult<Self> {
        let c = &config;
        check(c.model.name == "stat5", "model.name", "unknown model; available: stat5")?;
        check(c.model.n_stages >= 1, "model.n_stages", "need at least one delay-chain stage")?;
        let x0 = c.model.x0.clone().unwrap_or_else(|| STAT5_X0.to_vec());
        check(x0.len() == 4, "model.x0", "STAT5 has 4 states")?;
        check(x0.iter().all(|v| v.is_finite() && *v >= 0.0), "model.x0", "states must be finite and non-negative")?;
        let noise = c.model.noise.clone().unwrap_or_default();
        in_field("model.noise".into(), noise.validate(2))?;
        let (model, prior) = in_field("model".into(), stat5_model_with(c.model.n_stages, &x0, noise))?;

        let mut entries = prior.entries().to_vec();
        for (i, o) in c.uncertainty.overrides.iter().enumerate() {
            in_field(format!("uncertainty.overrides[{i}].dist"), o.dist.validate())?;
            match entries.iter_mut().find(|e| e.target == o.target) {
                Some(e) => *e = o.clone(),
                None => entries.push(o.clone()),
            }
        }
        let prior =
            in_field("uncertainty.overrides".into(), UncertaintySet::new(entries, prior.base_theta().to_vec()))?;
        in_field("uncertainty.overrides".into(), prior.to_standard(model.x0()).map(|_| ()))?;
        let uset = if c.uncertainty.collapse_to_means { prior.collapsed_to_means() } else { prior.clone() };

        if let NodeStrategy::LowDiscrepancy { n_c } = c.pce.nodes {
            check(n_c >= basis_size(uset.n_xi(), c.pce.degree), "pce.nodes.n_c", "fewer nodes than basis functions")?;
        }
        check(c.input.n_seg >= 1, "input.n_seg", "need at least one segment")?;
        check(c.input.t_f.is_finite() && c.input.t_f > 0.0, "input.t_f", "horizon must be positive")?;
        let (lo, hi) = c.input.bounds;
        check(lo.is_finite() && hi.is_finite() && lo < hi, "input.bounds", "need finite bounds with lo < hi")?;
        let t_f = c.input.t_f;
        let template =
            in_field("input".into(), PiecewiseConstantInput::constant(0.5 * (lo + hi), c.input.n_seg, t_f, (lo, hi)))?;
        check(
            c.integrator.max_step.is_finite() && c.integrator.max_step > 0.0,
            "integrator.max_step",
            "must be positive",
        )?;
        let integrator = IntegratorOptions { max_step: c.integrator.max_step };

        check(c.design.w.is_finite() && c.design.w >= 0.0, "design.w", "variance weight must be non-negative")?;
        let s = &c.design.solver;
        check(s.max_iter >= 1, "design.solver.max_iter", "must be positive")?;
        check(s.restarts >= 1, "design.solver.restarts", "must be positive")?;
        check(
            s.penalty_weight.is_finite() && s.penalty_weight >= 0.0,
            "design.solver.penalty_weight",
            "must be non-negative",
        )?;
        check(s.initial_step > 0.0 && s.initial_step <= 1.0, "design.solver.initial_step", "must lie in (0, 1]")?;
        check(s.xtol > 0.0 && s.ftol >= 0.0, "design.solver.xtol", "tolerances must be positive")?;
        let constraints = c
            .design
            .constraints
            .iter()
            .enumerate()
            .map(|(i, cc)| build_constraint(&format!("design.constraints[{i}]"), cc, &model, t_f))
            .collect::<CliResult<Vec<_>>>()?;

        let v = &c.validate;
        check(v.n_runs >= 1, "validate.n_runs", "need at least one run")?;
        check(v.noise_scale.is_finite() && v.noise_scale >= 0.0, "validate.noise_scale", "must be non-negative")?;
        check(v.histogram_bins >= 1, "validate.histogram_bins", "need at least one bin")?;
        check(v.estimator.max_iter >= 1, "validate.estimator.max_iter", "must be positive")?;
        if let Some(p) = v.probe_time {
            check(p >= 0.0 && p <= t_f, "validate.probe_time", "must lie within the horizon")?;
        }
        time_grid("validate", v.grid.as_ref(), v.grid_dt, t_f)?;
        time_grid("propagate", c.propagate.grid.as_ref(), c.propagate.grid_dt, t_f)?;
        let check_cc = match &v.check {
            Some(cc) => Some(build_constraint("validate.check", cc, &model, t_f)?),
            None => constraints.first().cloned(),
        };

        Ok(Prepared { config, model, uset, prior, template, integrator, constraints, check: check_cc })
    }

    pub fn problem(&self, seed: u64) -> CliResult<DesignProblem> {
        let c = &self.config;
        let solver = SolverOptions { seed, ..c.design.solver };
        let p = DesignProblem::new(
            self.model.clone(),
            self.uset.clone(),
            c.pce.degree,
            self.template.clone(),
            c.design.criterion,
            c.design.w,
            self.constraints.clone(),
        )
        .and_then(|p| p.with_node_strategy(c.pce.nodes))
        .and_then(|p| p.with_solver(solver))
        .map_err(CliError::compute)?;
        Ok(p.with_integrator(self.integrator))
    }

    pub fn mc_config(&self, seed: u64) -> CliResult<McConfig> {
        let v = &self.config.validate;
        let t_f = self.template.t_f();
        let mut cfg = McConfig::new(t_f, seed).map_err(CliError::compute)?;
        cfg.n_runs = v.n_runs;
        cfg.grid = time_grid("validate", v.grid.as_ref(), v.grid_dt, t_f)?;
        cfg.noise_scale = v.noise_scale;
        cfg.estimator = v.estimator;
        cfg.integrator = self.integrator;
        cfg.check = self.check.clone();
        cfg.probe_time = v.probe_time.unwrap_or(t_f);
        cfg.histogram_bins = v.histogram_bins;
        Ok(cfg)
    }

    /// Reads an input profile and checks it against the configured template.
    pub fn read_input(&self, path: &Path) -> CliResult<PiecewiseConstantInput> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let input = PiecewiseConstantInput::read_csv(file, self.template.bounds()).map_err(|e| CliError {
            kind: "input",
            field: None,
            message: format!("{}: {e}", path.display()),
        })?;
        let mismatch = |m: String| CliError { kind: "input", field: None, message: format!("{}: {m}", path.display()) };
        if input.n_seg() != self.template.n_seg() {
            return Err(mismatch(format!("{} segments, config expects {}", input.n_seg(), self.template.n_seg())));
        }
        if (input.t_f() - self.template.t_f()).abs() > 1e-9 * self.template.t_f() {
            return Err(mismatch(format!("horizon {}, config expects {}", input.t_f(), self.template.t_f())));
        }
        Ok(input)
    }
}

fn time_grid(prefix: &str, grid: Option<&Vec<f64>>, dt: f64, t_f: f64) -> CliResult<Vec<f64>> {
    match grid {
        Some(g) => {
            check(!g.is_empty(), format!("{prefix}.grid"), "grid must not be empty")?;
            check(g.windows(2).all(|w| w[1] > w[0]), format!("{prefix}.grid"), "grid must be strictly increasing")?;
            check(g[0] >= 0.0 && g[g.len() - 1] <= t_f, format!("{prefix}.grid"), "grid must lie within the horizon")?;
            Ok(g.clone())
        }
        None => {
            check(dt.is_finite() && dt > 0.0, format!("{prefix}.grid_dt"), "spacing must be positive")?;
            in_field(format!("{prefix}.grid_dt"), uniform_grid(t_f, dt))
        }
    }
}

fn build_constraint(prefix: &str, cc: &ConstraintConfig, model: &ModelSpec, t_f: f64) -> CliResult<ChanceConstraint> {
    check(cc.beta > 0.0 && cc.beta < 1.0, format!("{prefix}.beta"), "risk level must lie strictly between 0 and 1")?;
    check(cc.b.is_finite() && cc.b != 0.0, format!("{prefix}.b"), "orientation must be finite and non-zero")?;
    check(cc.x_max.is_finite(), format!("{prefix}.x_max"), "threshold must be finite")?;
    let n_x = model.n_x();
    let coeffs = match &cc.target {
        TargetConfig::State { index } => {
            check(*index < n_x, format!("{prefix}.target.index"), "state index out of range")?;
            let mut c = vec![0.0; n_x];
            c[*index] = 1.0;
            c
        }
        TargetConfig::Output { index } => {
            check(*index < model.n_y(), format!("{prefix}.target.index"), "output index out of range")?;
            let mut hx = nalgebra::DMatrix::zeros(model.n_y(), n_x);
            model.dynamics().jac_output(model.x0(), &mut hx);
            hx.row(*index).iter().copied().collect()
        }
        TargetConfig::Coeffs { values } => {
            check(values.len() == n_x, format!("{prefix}.target.values"), "need one coefficient per state")?;
            values.clone()
        }
    };
    let grid = time_grid(prefix, cc.grid.as_ref(), cc.grid_dt, t_f)?;
    in_field(prefix.to_string(), ChanceConstraint::new(coeffs, cc.b, cc.x_max, cc.beta, grid))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn out_dir(args: &CommonArgs, config: &RunConfig) -> CliResult<PathBuf> {
    let dir = args.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn prepare(args: &CommonArgs) -> CliResult<(Prepared, PathBuf, u64)> {
    let config = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let prepared = Prepared::new(config)?;
    let dir = out_dir(args, &prepared.config)?;
    Ok((prepared, dir, seed))
}

pub fn cmd_design(args: &CommonArgs) -> CliResult<i32> {
    let (prepared, dir, seed) = prepare(args)?;
    let result = prepared.problem(seed)?.solve().map_err(CliError::compute)?;
    write_json(&dir.join("design.json"), &result)?;
    let u = result.u_star().map_err(CliError::compute)?;
    write_with(&dir.join("input.csv"), |w| u.write_csv(w))?;
    Ok(if result.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

pub fn cmd_validate(args: &InputArgs) -> CliResult<i32> {
    let (prepared, dir, seed) = prepare(&args.common)?;
    let input = prepared.read_input(&args.input)?;
    let cfg = prepared.mc_config(seed)?;
    let report = run_mc(&prepared.model, &prepared.prior, &input, &cfg).map_err(CliError::compute)?;
    write_with(&dir.join("runs.csv"), |w| report.write_runs_csv(w))?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    write_with(&dir.join("histogram.csv"), |w| report.write_histogram_csv(w))?;
    Ok(EXIT_OK)
}

pub fn cmd_propagate(args: &InputArgs) -> CliResult<i32> {
    let (prepared, dir, seed) = prepare(&args.common)?;
    let input = prepared.read_input(&args.input)?;
    let c = &prepared.config.propagate;
    let grid = time_grid("propagate", c.grid.as_ref(), c.grid_dt, input.t_f())?;
    let problem = prepared.problem(seed)?;
    let rows = problem.moment_table(&input, &grid).map_err(CliError::compute)?;
    let (nx, ny, nc) = (prepared.model.n_x(), prepared.model.n_y(), prepared.constraints.len());
    write_with(&dir.join("moments.csv"), |w| {
        let mut header = vec!["t".to_string()];
        for i in 1..=nx {
            header.extend([format!("x{i}_mean"), format!("x{i}_var")]);
        }
        for i in 1..=ny {
            header.extend([format!("y{i}_mean"), format!("y{i}_var")]);
        }
        for k in 1..=nc {
            header.extend([format!("c{k}_mean"), format!("c{k}_var"), format!("c{k}_margin")]);
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &rows {
            let mut cells = vec![num(r.t)];
            for &(m, v) in r.states.iter().chain(&r.outputs) {
                cells.extend([num(m), num(v)]);
            }
            for &(m, v, g) in &r.targets {
                cells.extend([num(m), num(v), num(g)]);
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })?;
    Ok(EXIT_OK)
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("--threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError {
            kind: "runtime",
            field: None,
            message: e.to_string(),
        })?;
    }
    Ok(())
}

/// JSON schema of [`RunConfig`], as shipped in `schema/run_config.schema.json`.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(RunConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}

/// Runs a parsed command; failures are printed as error JSON on stderr.
pub fn run(cli: Cli) -> i32 {
    let threads = match &cli.command {
        Command::Design(a) => a.threads,
        Command::Validate(a) | Command::Propagate(a) => a.common.threads,
        Command::Schema => None,
    };
    let outcome = configure_threads(threads).and_then(|_| match &cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Schema => {
            print!("{}", config_schema());
            Ok(EXIT_OK)
        }
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            EXIT_ERROR
        }
    }
}
