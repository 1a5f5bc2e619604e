//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 6, 7 and 9 drive the `roed` binary on the bundled
//! STAT5 configurations and keep their artifacts under the cargo tmp dir.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, Exp, Gamma, Normal, Uniform};
use robust_oed::dynamics::{
    integrate, min_eigenvalue, simulate, uniform_grid, Dynamics, IntegratorOptions, ModelSpec, NoisePolicy,
    PiecewiseConstantInput,
};
use robust_oed::models::{stat5_model, STAT5_K1, STAT5_K2};
use robust_oed::oed::{surrogate_margin, ChanceConstraint};
use robust_oed::pce::{CollocationPlan, NodeStrategy};
use robust_oed::polynomials::{basis_size, MultiIndexBasis, PolyFamily};
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn stat5_families() -> Vec<PolyFamily> {
    [STAT5_K1, STAT5_K2].iter().map(|d| d.family().unwrap()).collect()
}

fn criterion_1() -> Outcome {
    let basis = MultiIndexBasis::new(stat5_families(), 4).map_err(|e| e.to_string())?;
    ensure(basis.len() == 15 && basis_size(2, 4) == 15, format!("basis has {} terms", basis.len()))
}

/// `E[ξᵏ]` for `ξ = 2T − 1`, `T ~ Beta(p, q)`, from `E[Tʳ] = ∏ (p+i)/(p+q+i)`.
fn standard_moment(p: f64, q: f64, k: usize) -> f64 {
    let t_moment = |r: usize| (0..r).map(|i| (p + i as f64) / (p + q + i as f64)).product::<f64>();
    let mut binom = 1.0;
    let mut sum = 0.0;
    for r in 0..=k {
        sum += binom * 2f64.powi(r as i32) * t_moment(r) * (-1f64).powi((k - r) as i32);
        binom = binom * (k - r) as f64 / (r + 1) as f64;
    }
    sum
}

/// Polynomial in two variables as `(i, j, c)` terms `c·ξ₁ⁱξ₂ʲ`.
type Poly = Vec<(usize, usize, f64)>;

fn poly_eval(p: &Poly, xi: &[f64]) -> f64 {
    p.iter().map(|&(i, j, c)| c * xi[0].powi(i as i32) * xi[1].powi(j as i32)).sum()
}

fn poly_moments(p: &Poly, m1: &dyn Fn(usize) -> f64, m2: &dyn Fn(usize) -> f64) -> (f64, f64) {
    let mean: f64 = p.iter().map(|&(i, j, c)| c * m1(i) * m2(j)).sum();
    let second: f64 = p
        .iter()
        .flat_map(|a| p.iter().map(move |b| (a, b)))
        .map(|(&(i, j, c), &(k, l, d))| c * d * m1(i + k) * m2(j + l))
        .sum();
    (mean, second - mean * mean)
}

fn criterion_2() -> Outcome {
    let families = stat5_families();
    let basis = Arc::new(MultiIndexBasis::new(families.clone(), 4).map_err(|e| e.to_string())?);
    let plan = CollocationPlan::new(basis, NodeStrategy::TensorQuadrature).map_err(|e| e.to_string())?;
    let pce = |p: &Poly| {
        let values: Vec<f64> = plan.nodes().iter().map(|xi| poly_eval(p, xi)).collect();
        plan.fit(&values).map(|e| (e.mean(), e.variance())).map_err(|e| e.to_string())
    };
    // Jacobi(a, b) on [-1, 1] is 2T − 1 with T ~ Beta(b + 1, a + 1)
    let shapes: Vec<(f64, f64)> = families
        .iter()
        .map(|f| match *f {
            PolyFamily::Jacobi { a, b } => (b + 1.0, a + 1.0),
            _ => unreachable!(),
        })
        .collect();

    let psi: Poly = vec![(2, 1, 1.0), (0, 1, 0.3)];
    let (pm, pv) = pce(&psi)?;
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let betas: Vec<Beta<f64>> = shapes.iter().map(|&(p, q)| Beta::new(p, q).unwrap()).collect();
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let xi = [2.0 * betas[0].sample(&mut rng) - 1.0, 2.0 * betas[1].sample(&mut rng) - 1.0];
            poly_eval(&psi, &xi)
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let m4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / n as f64;
    let se_mean = (var / n as f64).sqrt();
    let se_var = ((m4 - var * var) / n as f64).sqrt();
    let mc_ok = (pm - mean).abs() <= 3.0 * se_mean && (pv - var).abs() <= 3.0 * se_var;

    let m1 = |k| standard_moment(shapes[0].0, shapes[0].1, k);
    let m2 = |k| standard_moment(shapes[1].0, shapes[1].1, k);
    let mut polys: Vec<Poly> = Vec::new();
    for total in 0..=4 {
        for i in 0..=total {
            polys.push(vec![(i, total - i, 1.0)]);
        }
    }
    let mut prng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        polys.push(
            (0..=4usize)
                .flat_map(|t| (0..=t).map(move |i| (i, t - i)))
                .map(|(i, j)| (i, j, prng.random_range(-2.0..2.0)))
                .collect(),
        );
    }
    let mut worst: f64 = 0.0;
    for p in &polys {
        let (em, ev) = poly_moments(p, &m1, &m2);
        let (qm, qv) = pce(p)?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        let r = rel(qm, em).max(if ev == 0.0 { qv.abs() } else { rel(qv, ev) });
        worst = worst.max(r);
    }
    let detail = format!(
        "ψ: mean {pm:.6} vs {mean:.6} ({:.2} SE), var {pv:.6} vs {var:.6} ({:.2} SE); {} polynomials of degree ≤ 4, worst rel err {worst:.1e}",
        (pm - mean).abs() / se_mean,
        (pv - var).abs() / se_var,
        polys.len()
    );
    ensure(mc_ok && worst <= 1e-8, detail)
}

fn random_profile(rng: &mut ChaCha8Rng) -> PiecewiseConstantInput {
    let levels = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    PiecewiseConstantInput::new(levels, 40.0, (0.0, 1.0)).unwrap()
}

fn criterion_3_and_4() -> (Outcome, Outcome) {
    let (model, uset) = stat5_model(20).unwrap();
    let opts = IntegratorOptions { max_step: 0.1 };
    let grid = uniform_grid(40.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_sens: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    let mut hx = DMatrix::zeros(model.n_y(), model.n_x());
    model.dynamics().jac_output(model.x0(), &mut hx);
    for _ in 0..10 {
        let (theta, x0) = uset.sample(&mut rng, model.x0()).unwrap();
        let input = random_profile(&mut rng);
        let tr = integrate(&model, &input, &theta, &x0, &grid, &opts).unwrap();
        for j in 0..theta.len() {
            let h = 1e-5 * theta[j].abs();
            let shifted = |sign: f64| {
                let mut th = theta.clone();
                th[j] += sign * h;
                simulate(&model, &input, &th, &x0, &grid, &opts).unwrap()
            };
            let (plus, minus) = (shifted(1.0), shifted(-1.0));
            for k in 0..grid.len() {
                let dy = &hx * tr.states[k].s.column(j);
                for i in 0..model.n_y() {
                    let fd = (plus.outputs[k][i] - minus.outputs[k][i]) / (2.0 * h);
                    let err = (dy[i] - fd).abs();
                    let rel = if fd == 0.0 && dy[i] == 0.0 { 0.0 } else { err / fd.abs().max(dy[i].abs()) };
                    worst_sens = worst_sens.max(rel);
                }
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for st in &tr.states {
            worst_sym = worst_sym.max((&st.fim - st.fim.transpose()).abs().max());
            let lam = min_eigenvalue(&st.fim).unwrap();
            worst_drop = worst_drop.max(prev - lam);
            prev = lam;
        }
    }
    (
        ensure(worst_sens <= 1e-4, format!("10 triples, worst output-sensitivity rel err {worst_sens:.2e}")),
        ensure(
            worst_sym <= 1e-10 && worst_drop <= 1e-8,
            format!("max |F−Fᵀ| {worst_sym:.1e}, max λ_min decrease {:.1e}", worst_drop.max(0.0)),
        ),
    )
}

type Draw = Box<dyn FnMut(&mut ChaCha8Rng) -> f64>;

/// Named distribution with its exact mean and variance.
fn sample_from(kind: usize, rng: &mut ChaCha8Rng) -> (String, f64, f64, Draw) {
    match kind {
        0 => {
            let (mu, sd) = (rng.random_range(-5.0..5.0), rng.random_range(0.1..3.0));
            let d = Normal::new(mu, sd).unwrap();
            (format!("N({mu:.2},{sd:.2})"), mu, sd * sd, Box::new(move |r| d.sample(r)))
        }
        1 => {
            let lo = rng.random_range(-3.0..3.0);
            let hi = lo + rng.random_range(0.5..4.0);
            let d = Uniform::new(lo, hi).unwrap();
            (format!("U({lo:.2},{hi:.2})"), 0.5 * (lo + hi), (hi - lo).powi(2) / 12.0, Box::new(move |r| d.sample(r)))
        }
        2 => {
            let (p, q): (f64, f64) = (rng.random_range(0.5..6.0), rng.random_range(0.5..6.0));
            let d = Beta::new(p, q).unwrap();
            let var = p * q / ((p + q).powi(2) * (p + q + 1.0));
            (format!("Beta({p:.2},{q:.2})"), p / (p + q), var, Box::new(move |r| d.sample(r)))
        }
        3 => {
            let rate = rng.random_range(0.2..3.0);
            let d = Exp::new(rate).unwrap();
            (format!("Exp({rate:.2})"), 1.0 / rate, 1.0 / (rate * rate), Box::new(move |r| d.sample(r)))
        }
        _ => {
            let (k, s) = (rng.random_range(0.5..5.0), rng.random_range(0.2..2.0));
            let d = Gamma::new(k, s).unwrap();
            (format!("Gamma({k:.2},{s:.2})"), k * s, k * s * s, Box::new(move |r| d.sample(r)))
        }
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let n = 100_000;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut worst_case = String::new();
    for case in 0..50 {
        let (name, mean, var, mut draw) = sample_from(case % 5, &mut rng);
        let b: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.2..3.0);
        let beta: f64 = rng.random_range(0.01..0.3);
        // tight in half the cases, with slack otherwise
        let slack = if case % 2 == 0 { 0.0 } else { rng.random_range(0.0..0.5) * b.abs() * var.sqrt() };
        let x_max = b * mean + (b * b * var).sqrt() * ((1.0 - beta) / beta).sqrt() + slack;
        let cc = ChanceConstraint::new(vec![1.0], b, x_max, beta, vec![0.0]).map_err(|e| e.to_string())?;
        let margin = surrogate_margin(mean, var, &cc).map_err(|e| e.to_string())?;
        if margin < -1e-12 * x_max.abs().max(1.0) {
            return Err(format!("case {case}: constructed margin {margin} is negative"));
        }
        let violations = (0..n).filter(|_| !cc.holds(draw(&mut rng))).count();
        let rate = violations as f64 / n as f64;
        let allowed = beta + 3.0 * (beta * (1.0 - beta) / n as f64).sqrt();
        if rate / allowed > worst {
            worst = rate / allowed;
            worst_case = format!("{name}, b={b:.2}, β={beta:.3}: violation {rate:.4} vs allowed {allowed:.4}");
        }
        if rate > allowed {
            return Err(format!("case {case}: {name}, b={b:.2}, β={beta:.3}: violation {rate:.4} > {allowed:.4}"));
        }
    }
    Ok(format!("50 cases; closest: {worst_case}"))
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn roed(args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_roed")).args(args).output().map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(c) if c != 1 => Ok(c),
        _ => Err(format!("roed {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim())),
    }
}

/// Design followed by validation of the resulting input; returns the
/// design's exit code.
fn pipeline(config: &str, dir: &Path) -> Result<i32, String> {
    let _ = fs::remove_dir_all(dir);
    let cfg = manifest().join("configs").join(config);
    let (cfg, dir_s) = (cfg.to_str().unwrap(), dir.to_str().unwrap());
    let code = roed(&["design", "--config", cfg, "--out", dir_s, "--threads", "2"])?;
    let input = dir.join("input.csv");
    roed(&["validate", "--config", cfg, "--input", input.to_str().unwrap(), "--out", dir_s, "--threads", "2"])?;
    Ok(code)
}

fn summary(dir: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(dir.join("summary.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn theta_true_columns(dir: &Path) -> Result<Vec<Vec<String>>, String> {
    let mut r = csv::Reader::from_path(dir.join("runs.csv")).map_err(|e| e.to_string())?;
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let cols: Vec<usize> =
        header.iter().enumerate().filter(|(_, h)| h.starts_with("theta_true")).map(|(i, _)| i).collect();
    r.records()
        .map(|rec| rec.map(|rec| cols.iter().map(|&i| rec[i].to_string()).collect()).map_err(|e| e.to_string()))
        .collect()
}

fn criteria_6_and_7(robust: &Path, standard: &Path) -> (Outcome, Outcome) {
    let run = || -> Result<(Value, Value, i32), String> {
        let code = pipeline("stat5_robust.json", robust)?;
        pipeline("stat5_standard.json", standard)?;
        if theta_true_columns(robust)? != theta_true_columns(standard)? {
            return Err("runs are not paired".into());
        }
        Ok((summary(robust)?, summary(standard)?, code))
    };
    let (r, s, code) = match run() {
        Ok(v) => v,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let (rs, ss) = (r["satisfaction"].as_f64().unwrap_or(f64::NAN), s["satisfaction"].as_f64().unwrap_or(f64::NAN));
    let n = r["n_runs"].as_u64().unwrap_or(0);
    let six = ensure(
        n == 1000 && code == 0 && rs >= 0.95 && ss < rs,
        format!(
            "{n} paired runs: robust satisfaction {rs:.3}, standard {ss:.3} (robust design feasible: {})",
            code == 0
        ),
    );
    let (re, se) = (r["avg_rel_err"][0].as_f64().unwrap_or(f64::NAN), s["avg_rel_err"][0].as_f64().unwrap_or(f64::NAN));
    let seven =
        ensure(re < se, format!("k1 average relative error: robust {re:.5}, standard {se:.5}, ratio {:.3}", se / re));
    (six, seven)
}

/// `ẋ = −x + u`, `x(0) = 2`, `u ≡ 1`: `x(t) = 1 + e^{−t}`.
struct Relax;

impl Dynamics for Relax {
    fn n_x(&self) -> usize {
        1
    }
    fn n_theta(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], _xd: &[f64], u: f64, theta: &[f64], dx: &mut [f64]) {
        dx[0] = -theta[0] * x[0] + u;
    }
    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

fn criterion_8() -> Outcome {
    let model = ModelSpec::new(Arc::new(Relax), vec![2.0], NoisePolicy::default()).map_err(|e| e.to_string())?;
    let input = PiecewiseConstantInput::constant(1.0, 1, 5.0, (0.0, 1.0)).map_err(|e| e.to_string())?;
    let exact = 1.0 + (-5.0f64).exp();
    let err = |h: f64| {
        let tr = simulate(&model, &input, &[1.0], &[2.0], &[0.0, 5.0], &IntegratorOptions { max_step: h }).unwrap();
        (tr.states[1][0] - exact).abs()
    };
    let (e1, e2, e3) = (err(0.2), err(0.1), err(0.05));
    let (r1, r2) = (e1 / e2, e2 / e3);
    ensure(
        (12.0..=20.0).contains(&r1) && (12.0..=20.0).contains(&r2),
        format!("error ratios {r1:.2} (h 0.2→0.1), {r2:.2} (h 0.1→0.05)"),
    )
}

fn criterion_9(robust: &Path, standard: &Path, root: &Path) -> Outcome {
    let mut differing = Vec::new();
    for (config, first) in [("stat5_robust.json", robust), ("stat5_standard.json", standard)] {
        let second = root.join(format!("{}-rerun", first.file_name().unwrap().to_str().unwrap()));
        pipeline(config, &second)?;
        for f in ["design.json", "input.csv", "runs.csv", "summary.json", "histogram.csv"] {
            let (a, b) = (fs::read(first.join(f)), fs::read(second.join(f)));
            match (a, b) {
                (Ok(a), Ok(b)) if a == b => {}
                _ => differing.push(format!("{config}:{f}")),
            }
        }
    }
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            "robust and standard pipelines byte-identical on rerun".into()
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn report(n: usize, title: &str, started: Instant, outcome: &Outcome, failures: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => println!("PASS criterion {n}: {title}: {d} [{secs:.1}s]"),
        Err(d) => {
            *failures += 1;
            println!("FAIL criterion {n}: {title}: {d} [{secs:.1}s]");
        }
    }
}

fn main() {
    let mut failures = 0;
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let (robust, standard) = (root.join("robust"), root.join("standard"));

    let t = Instant::now();
    report(1, "basis size", t, &criterion_1(), &mut failures);
    let t = Instant::now();
    report(2, "PCE moments", t, &criterion_2(), &mut failures);
    let t = Instant::now();
    let (three, four) = criterion_3_and_4();
    report(3, "sensitivities vs finite differences", t, &three, &mut failures);
    report(4, "FIM symmetry and monotone λ_min", t, &four, &mut failures);
    let t = Instant::now();
    report(5, "Cantelli surrogate soundness", t, &criterion_5(), &mut failures);
    let t = Instant::now();
    let (six, seven) = criteria_6_and_7(&robust, &standard);
    report(6, "constraint satisfaction, robust vs standard", t, &six, &mut failures);
    report(7, "k1 estimation error, robust vs standard", t, &seven, &mut failures);
    let t = Instant::now();
    report(8, "RK4 order", t, &criterion_8(), &mut failures);
    let t = Instant::now();
    report(9, "determinism", t, &criterion_9(&robust, &standard, &root), &mut failures);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
