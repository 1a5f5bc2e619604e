use std::sync::Arc;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Gamma};

use super::*;

/// ẋ = −θx, y = x.
struct Decay;

impl Dynamics for Decay {
    fn n_x(&self) -> usize {
        1
    }
    fn n_theta(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], _xd: &[f64], _u: f64, theta: &[f64], dx: &mut [f64]) {
        dx[0] = -theta[0] * x[0];
    }
    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// ẋ = 0 with a constant-rate output, exercises the S₀ term of the FIM.
struct Frozen;

impl Dynamics for Frozen {
    fn n_x(&self) -> usize {
        2
    }
    fn n_theta(&self) -> usize {
        2
    }
    fn n_y(&self) -> usize {
        1
    }
    fn rhs(&self, _x: &[f64], _xd: &[f64], _u: f64, _theta: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
    }
    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0] + 2.0 * x[1];
    }
}

/// ẋ₁ = κ(u − x₁) and ẋ₂ = −x₁(t − τ) with a single delayed slot.
struct Lagged {
    kappa: f64,
}

impl Dynamics for Lagged {
    fn n_x(&self) -> usize {
        2
    }
    fn n_theta(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn n_delayed(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], xd: &[f64], u: f64, theta: &[f64], dx: &mut [f64]) {
        dx[0] = self.kappa * (u - x[0]);
        dx[1] = -theta[0] * xd[0];
    }
    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[1];
    }
}

fn unit_noise() -> NoisePolicy {
    NoisePolicy::Absolute { sigma: vec![1.0] }
}

#[test]
fn scalar_decay_sensitivity_closed_form() {
    let model = ModelSpec::new(Arc::new(Decay), vec![1.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 1, 5.0, (0.0, 1.0)).unwrap();
    let grid = uniform_grid(5.0, 0.5).unwrap();
    let theta = 0.7;
    let traj = integrate(&model, &input, &[theta], &[1.0], &grid, &IntegratorOptions::default()).unwrap();
    for (t, st) in traj.times.iter().zip(&traj.states) {
        let exact = -t * (-theta * t).exp();
        assert!((st.s[(0, 0)] - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "t={t}");
        // central differences of the state trajectory
        let h = 1e-5 * theta;
        let xp = simulate(&model, &input, &[theta + h], &[1.0], &grid, &IntegratorOptions::default()).unwrap();
        let xm = simulate(&model, &input, &[theta - h], &[1.0], &grid, &IntegratorOptions::default()).unwrap();
        let k = traj.times.iter().position(|s| s == t).unwrap();
        let fd = (xp.states[k][0] - xm.states[k][0]) / (2.0 * h);
        assert!((st.s[(0, 0)] - fd).abs() <= 1e-6 * fd.abs().max(1e-3));
    }
    // F(t) = ∫ S² dt with Σ = 1
    let fim_end = traj.states.last().unwrap().fim[(0, 0)];
    let t = 5.0f64;
    let a = 2.0 * theta;
    let exact = 2.0 / a.powi(3) - (-a * t).exp() * (t * t / a + 2.0 * t / (a * a) + 2.0 / a.powi(3));
    assert!((fim_end - exact).abs() <= 1e-6 * exact);
}

#[test]
fn frozen_state_fim_is_linear_in_time() {
    let s0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 3.0]);
    let base = ModelSpec::new(Arc::new(Frozen), vec![0.2, 0.3], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 2, 4.0, (0.0, 1.0)).unwrap();
    let grid = uniform_grid(4.0, 1.0).unwrap();
    let opts = IntegratorOptions::default();

    let traj = integrate(&base, &input, &[0.0, 0.0], &[0.2, 0.3], &grid, &opts).unwrap();
    assert!(traj.states.last().unwrap().fim.iter().all(|v| *v == 0.0));

    let model = base.with_initial_sensitivity(s0.clone()).unwrap();
    let traj = integrate(&model, &input, &[0.0, 0.0], &[0.2, 0.3], &grid, &opts).unwrap();
    let hs = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]) * &s0;
    let expect = hs.transpose() * &hs * 4.0;
    let got = &traj.states.last().unwrap().fim;
    for (a, b) in got.iter().zip(expect.iter()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
}

#[test]
fn min_eigenvalue_examples() {
    assert_abs_diff_eq!(min_eigenvalue(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0, 9.0]));
    assert_abs_diff_eq!(min_eigenvalue(&d).unwrap(), 2.0, epsilon = 1e-14);
    let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    assert_abs_diff_eq!(min_eigenvalue(&m).unwrap(), 1.0, epsilon = 1e-14);
    assert!(min_eigenvalue(&DMatrix::zeros(2, 3)).is_err());
}

/// ẋ = A x with A = [[0, 1], [−4, −0.4]].
struct Oscillator;

impl Dynamics for Oscillator {
    fn n_x(&self) -> usize {
        2
    }
    fn n_theta(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], _xd: &[f64], _u: f64, _theta: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -4.0 * x[0] - 0.4 * x[1];
    }
    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

#[test]
fn rk4_is_fourth_order() {
    let model = ModelSpec::new(Arc::new(Oscillator), vec![1.0, 0.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 1, 5.0, (0.0, 1.0)).unwrap();
    let grid = vec![0.0, 5.0];
    // underdamped: x = e^{−0.2t}(cos ωt + 0.2/ω sin ωt), ω = √3.96
    let w = 3.96f64.sqrt();
    let exact = (-0.2f64 * 5.0).exp() * ((w * 5.0).cos() + 0.2 / w * (w * 5.0).sin());
    let err = |h: f64| {
        let tr = simulate(&model, &input, &[0.0], &[1.0, 0.0], &grid, &IntegratorOptions { max_step: h }).unwrap();
        (tr.states[1][0] - exact).abs()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn grid_validation() {
    let model = ModelSpec::new(Arc::new(Decay), vec![1.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 1, 5.0, (0.0, 1.0)).unwrap();
    let opts = IntegratorOptions::default();
    assert!(simulate(&model, &input, &[1.0], &[1.0], &[0.5, 1.0], &opts).is_err());
    assert!(simulate(&model, &input, &[1.0], &[1.0], &[0.0, 1.0, 1.0], &opts).is_err());
    assert!(simulate(&model, &input, &[1.0], &[1.0], &[0.0, 6.0], &opts).is_err());
    assert!(simulate(&model, &input, &[1.0, 2.0], &[1.0], &[0.0, 1.0], &opts).is_err());
}

#[test]
fn blow_up_is_reported() {
    let model = ModelSpec::new(Arc::new(Decay), vec![1.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 1, 50.0, (0.0, 1.0)).unwrap();
    let err = simulate(&model, &input, &[-40.0], &[1.0], &[0.0, 50.0], &IntegratorOptions::default()).unwrap_err();
    match err {
        crate::Error::BlowUp { t } => assert!(t > 0.0 && t <= 50.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unresolved_delays_are_rejected() {
    let model = ModelSpec::new(Arc::new(Lagged { kappa: 1.0 }), vec![0.0, 0.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(1.0, 1, 5.0, (0.0, 1.0)).unwrap();
    assert!(simulate(&model, &input, &[1.0], &[0.0, 0.0], &[0.0, 5.0], &IntegratorOptions::default()).is_err());
    assert!(delay_chain(&model, &[DelayRef { state: 0, tau: 1.0 }], 0).is_err());
    assert!(delay_chain(&model, &[DelayRef { state: 0, tau: 0.0 }], 4).is_err());
    assert!(delay_chain(&model, &[], 4).is_err());
}

#[test]
fn chain_fixed_point_is_exact() {
    // κ = 0 keeps x₁ ≡ c and the chain starts at c
    let c = 0.37;
    let model = ModelSpec::new(Arc::new(Lagged { kappa: 0.0 }), vec![c, 0.0], unit_noise()).unwrap();
    let chained = delay_chain(&model, &[DelayRef { state: 0, tau: 3.0 }], 7).unwrap();
    assert_eq!(chained.n_x(), 9);
    let input = PiecewiseConstantInput::constant(0.0, 1, 10.0, (0.0, 1.0)).unwrap();
    let tr = simulate(
        &chained,
        &input,
        &[1.0],
        chained.x0(),
        &uniform_grid(10.0, 1.0).unwrap(),
        &IntegratorOptions::default(),
    )
    .unwrap();
    for x in &tr.states {
        assert!(x[2..].iter().all(|z| *z == c));
    }
}

#[test]
fn step_through_erlang_chain() {
    let model = ModelSpec::new(Arc::new(Lagged { kappa: 200.0 }), vec![0.0, 0.0], unit_noise()).unwrap();
    let chained = delay_chain(&model, &[DelayRef { state: 0, tau: 8.0 }], 20).unwrap();
    let input = PiecewiseConstantInput::constant(1.0, 1, 8.0, (0.0, 1.0)).unwrap();
    let tr =
        simulate(&chained, &input, &[1.0], chained.x0(), &[0.0, 8.0], &IntegratorOptions { max_step: 0.002 }).unwrap();
    let last = tr.states[1][chained.n_x() - 1];
    assert!((0.4..=0.6).contains(&last), "stage output {last}");
    let erlang = Gamma::new(20.0, 20.0 / 8.0).unwrap().cdf(8.0);
    assert!((last - erlang).abs() < 0.02, "{last} vs Erlang CDF {erlang}");
}

/// ẋ(t) = −x(t − 1) with x ≡ 1 on t ≤ 0, solved exactly by the method of
/// steps on unit intervals. Returns x(t_end) for integer t_end.
fn method_of_steps(t_end: usize) -> f64 {
    // polynomial on the current unit interval in local time σ ∈ [0, 1]
    let mut prev = vec![1.0];
    let mut x_start = 1.0;
    for _ in 0..t_end {
        // x(σ) = x_start − ∫₀^σ prev(r) dr
        let mut next = vec![x_start];
        for (k, c) in prev.iter().enumerate() {
            next.push(-c / (k as f64 + 1.0));
        }
        x_start = next.iter().sum();
        prev = next;
    }
    x_start
}

/// ẋ = −x_d with x_d the delayed copy of x itself.
struct SelfDelay;

impl Dynamics for SelfDelay {
    fn n_x(&self) -> usize {
        1
    }
    fn n_theta(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn n_delayed(&self) -> usize {
        1
    }
    fn rhs(&self, _x: &[f64], xd: &[f64], _u: f64, theta: &[f64], dx: &mut [f64]) {
        dx[0] = -theta[0] * xd[0];
    }
    fn output(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

#[test]
fn delay_chain_converges_to_method_of_steps() {
    assert_abs_diff_eq!(method_of_steps(1), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(method_of_steps(2), -0.5, epsilon = 1e-15);
    let reference = method_of_steps(4);
    let model = ModelSpec::new(Arc::new(SelfDelay), vec![1.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 1, 4.0, (0.0, 1.0)).unwrap();
    let errs: Vec<f64> = [5, 10, 20, 40, 80]
        .iter()
        .map(|&n| {
            let m = delay_chain(&model, &[DelayRef { state: 0, tau: 1.0 }], n).unwrap();
            let tr = simulate(&m, &input, &[1.0], m.x0(), &[0.0, 4.0], &IntegratorOptions { max_step: 0.005 }).unwrap();
            (tr.states[1][0] - reference).abs()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn chain_sensitivities_match_dense_jacobian() {
    let model = ModelSpec::new(Arc::new(Lagged { kappa: 2.0 }), vec![0.1, 0.0], unit_noise()).unwrap();
    let m = delay_chain(&model, &[DelayRef { state: 0, tau: 2.0 }], 5).unwrap();
    let dynamics = m.dynamics();
    let n = m.n_x();
    let x: Vec<f64> = (0..n).map(|i| 0.1 + 0.05 * i as f64).collect();
    let s = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.3).sin());
    let mut ds = DMatrix::zeros(n, 1);
    dynamics.sensitivity_rhs(&x, 0.6, &[1.3], &s, &mut ds);
    let mut jx = DMatrix::zeros(n, n);
    let mut jt = DMatrix::zeros(n, 1);
    fd_jacobian(n, &x, &mut jx, |xp, dx| dynamics.rhs(xp, &[], 0.6, &[1.3], dx));
    fd_jacobian(n, &[1.3], &mut jt, |tp, dx| dynamics.rhs(&x, &[], 0.6, tp, dx));
    let dense = &jx * &s + &jt;
    for (a, b) in ds.iter().zip(dense.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }
    let mut ja = DMatrix::zeros(n, n);
    dynamics.jac_x(&x, &[], 0.6, &[1.3], &mut ja);
    for (a, b) in ja.iter().zip(jx.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-7);
    }
}

#[test]
fn trajectory_csv_layout() {
    let model = ModelSpec::new(Arc::new(Decay), vec![1.0], unit_noise()).unwrap();
    let input = PiecewiseConstantInput::constant(0.0, 1, 2.0, (0.0, 1.0)).unwrap();
    let tr = simulate(&model, &input, &[1.0], &[1.0], &[0.0, 1.0, 2.0], &IntegratorOptions::default()).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x1,y1");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "0.0,1.0,1.0");
}
