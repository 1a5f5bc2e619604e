use std::io::Write;

use nalgebra::DMatrix;

use super::input::PiecewiseConstantInput;
use super::model::ModelSpec;
use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Upper bound on the RK4 step; actual steps divide each interval
    /// between consecutive breakpoints evenly.
    pub max_step: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { max_step: DEFAULT_STEP }
    }
}

/// States, sensitivities `S = ∂x/∂θ` and the running Fisher information `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub s: DMatrix<f64>,
    pub fim: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<AugmentedState>,
    pub outputs: Vec<Vec<f64>>,
}

/// Plain state trajectory without sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

fn check_grid(grid: &[f64], input: &PiecewiseConstantInput) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "time grid is empty"));
    }
    if grid[0] != 0.0 {
        return Err(Error::invalid("grid", "time grid must start at 0"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("grid", "time grid must be strictly increasing"));
    }
    if grid[grid.len() - 1] > input.t_f() * (1.0 + 1e-12) {
        return Err(Error::invalid("grid", "time grid extends past the input horizon"));
    }
    Ok(())
}

/// Classical RK4 over `[0, grid.last]`, never stepping across a grid point
/// or an input switching time. `record(k, y)` is called at each grid point.
fn drive<R, C>(
    y0: Vec<f64>,
    input: &PiecewiseConstantInput,
    grid: &[f64],
    opts: &IntegratorOptions,
    mut rhs: R,
    mut record: C,
) -> Result<()>
where
    R: FnMut(f64, f64, &[f64], &mut [f64]) -> Result<()>,
    C: FnMut(usize, &[f64]),
{
    check_grid(grid, input)?;
    if !(opts.max_step.is_finite() && opts.max_step > 0.0) {
        return Err(Error::invalid("max_step", "integration step must be positive"));
    }
    let t_end = grid[grid.len() - 1];
    let mut marks: Vec<f64> =
        grid.iter().copied().chain(input.breakpoints().into_iter().filter(|&b| b < t_end)).collect();
    marks.sort_by(f64::total_cmp);
    marks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end.max(1.0));

    let n = y0.len();
    let mut y = y0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut next_grid = 0;

    let mut emit = |t: f64, y: &[f64], next_grid: &mut usize| {
        while *next_grid < grid.len() && (grid[*next_grid] - t).abs() <= 1e-12 * t_end.max(1.0) {
            record(*next_grid, y);
            *next_grid += 1;
        }
    };
    emit(0.0, &y, &mut next_grid);

    for w in marks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let u = input.value(0.5 * (a + b));
        let steps = ((b - a) / opts.max_step - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / steps as f64;
        for i in 0..steps {
            let t = a + i as f64 * h;
            rhs(t, u, &y, &mut k1)?;
            for j in 0..n {
                tmp[j] = y[j] + 0.5 * h * k1[j];
            }
            rhs(t + 0.5 * h, u, &tmp, &mut k2)?;
            for j in 0..n {
                tmp[j] = y[j] + 0.5 * h * k2[j];
            }
            rhs(t + 0.5 * h, u, &tmp, &mut k3)?;
            for j in 0..n {
                tmp[j] = y[j] + h * k3[j];
            }
            rhs(t + h, u, &tmp, &mut k4)?;
            for j in 0..n {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { t: t + h });
            }
        }
        emit(b, &y, &mut next_grid);
    }
    Ok(())
}

fn require_resolved(model: &ModelSpec) -> Result<()> {
    if model.dynamics().n_delayed() > 0 {
        return Err(Error::invalid("model", "delayed arguments must be resolved with delay_chain first"));
    }
    Ok(())
}

/// Integrates states only.
pub fn simulate(
    model: &ModelSpec,
    input: &PiecewiseConstantInput,
    theta: &[f64],
    x0: &[f64],
    grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<StateTrajectory> {
    require_resolved(model)?;
    let dynamics = model.dynamics();
    if theta.len() != model.n_theta() {
        return Err(Error::DimensionMismatch { what: "theta", expected: model.n_theta(), got: theta.len() });
    }
    if x0.len() != model.n_x() {
        return Err(Error::DimensionMismatch { what: "x0", expected: model.n_x(), got: x0.len() });
    }
    let mut states = vec![Vec::new(); grid.len()];
    drive(
        x0.to_vec(),
        input,
        grid,
        opts,
        |_, u, y, dy| {
            dynamics.rhs(y, &[], u, theta, dy);
            Ok(())
        },
        |k, y| states[k] = y.to_vec(),
    )?;
    let outputs = states.iter().map(|x| model.output(x)).collect();
    Ok(StateTrajectory { times: grid.to_vec(), states, outputs })
}

/// Integrates the stacked system `(x, S, F)`:
///
/// ```text
/// ẋ = f(x, u, θ)
/// Ṡ = ∂f/∂x · S + ∂f/∂θ,           S(0) = ∂x₀/∂θ
/// Ḟ = (∂h/∂x · S)ᵀ Σ⁻¹ (∂h/∂x · S),  F(0) = 0
/// ```
///
/// with a diagonal `Σ(t)` from the model's noise policy evaluated at `y(t)`.
pub fn integrate(
    model: &ModelSpec,
    input: &PiecewiseConstantInput,
    theta: &[f64],
    x0: &[f64],
    grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    require_resolved(model)?;
    let dynamics = model.dynamics();
    let (nx, np, ny) = (model.n_x(), model.n_theta(), model.n_y());
    if theta.len() != np {
        return Err(Error::DimensionMismatch { what: "theta", expected: np, got: theta.len() });
    }
    if x0.len() != nx {
        return Err(Error::DimensionMismatch { what: "x0", expected: nx, got: x0.len() });
    }
    let noise = model.noise();
    let ns = nx * np;

    let mut z0 = vec![0.0; nx + ns + np * np];
    z0[..nx].copy_from_slice(x0);
    z0[nx..nx + ns].copy_from_slice(model.initial_sensitivity().as_slice());

    let mut s = DMatrix::zeros(nx, np);
    let mut ds = DMatrix::zeros(nx, np);
    let mut hx = DMatrix::zeros(ny, nx);
    let mut g = DMatrix::zeros(ny, np);
    let mut y = vec![0.0; ny];
    let mut weights = vec![0.0; ny];

    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    drive(
        z0,
        input,
        grid,
        opts,
        |t, u, z, dz| {
            let x = &z[..nx];
            dynamics.rhs(x, &[], u, theta, &mut dz[..nx]);
            s.copy_from_slice(&z[nx..nx + ns]);
            dynamics.sensitivity_rhs(x, u, theta, &s, &mut ds);
            dz[nx..nx + ns].copy_from_slice(ds.as_slice());

            dynamics.output(x, &mut y);
            for (i, w) in weights.iter_mut().enumerate() {
                let sigma = noise.sigma(i, y[i]);
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::SingularCovariance { t });
                }
                *w = 1.0 / (sigma * sigma);
            }
            dynamics.jac_output(x, &mut hx);
            g.gemm(1.0, &hx, &s, 0.0);
            let df = &mut dz[nx + ns..];
            for a in 0..np {
                for b in 0..np {
                    let mut acc = 0.0;
                    for i in 0..ny {
                        acc += g[(i, a)] * weights[i] * g[(i, b)];
                    }
                    df[a + b * np] = acc;
                }
            }
            Ok(())
        },
        |k, z| raw[k] = z.to_vec(),
    )?;

    let states: Vec<AugmentedState> = raw
        .into_iter()
        .map(|z| AugmentedState {
            x: z[..nx].to_vec(),
            s: DMatrix::from_column_slice(nx, np, &z[nx..nx + ns]),
            fim: DMatrix::from_column_slice(np, np, &z[nx + ns..]),
        })
        .collect();
    let outputs = states.iter().map(|st| model.output(&st.x)).collect();
    Ok(Trajectory { times: grid.to_vec(), states, outputs })
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigen(m)?.values[0])
}

/// Uniform grid `0, dt, 2dt, …` that always ends exactly at `t_f`.
pub fn uniform_grid(t_f: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0 && t_f.is_finite() && t_f > 0.0) {
        return Err(Error::invalid("grid", "spacing and horizon must be positive"));
    }
    let n = (t_f / dt - 1e-9).ceil() as usize;
    let mut g: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    g.push(t_f);
    Ok(g)
}

/// Writes `t, x1..x_nx, y1..y_ny` rows.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    times: &[f64],
    states: &[Vec<f64>],
    outputs: &[Vec<f64>],
) -> Result<()> {
    let nx = states.first().map_or(0, Vec::len);
    let ny = outputs.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=nx).map(|i| format!("x{i}")));
    header.extend((1..=ny).map(|i| format!("y{i}")));
    writeln!(w, "{}", header.join(","))?;
    for ((t, x), y) in times.iter().zip(states).zip(outputs) {
        let row: Vec<String> = std::iter::once(t).chain(x).chain(y).map(|&v| crate::fmt::num(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let xs: Vec<Vec<f64>> = self.states.iter().map(|s| s.x.clone()).collect();
        write_trajectory_csv(w, &self.times, &xs, &self.outputs)
    }
}

impl StateTrajectory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_trajectory_csv(w, &self.times, &self.states, &self.outputs)
    }
}
