//! Trajectory generation: fixed-step RK4 for nonlinear systems, exact
//! zero-order-hold stepping for linear models, deterministic excitation
//! signals, and the sample-wise supply-rate check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::zoh_discretize;
use crate::model::{StateSpaceModel, SupplyRate, Trajectory};

type DynMap = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A nonlinear system `ẋ = f(x, u)`, `y = g(x, u)`.
///
/// `f` and `g` are assumed Lipschitz continuous on the operating domain;
/// this cannot be checked numerically and is the caller's responsibility.
/// The equilibrium condition `f(0, 0) = 0` is checked at registration.
pub struct NonlinearSystem {
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    f: DynMap,
    g: DynMap,
}

impl NonlinearSystem {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        f: DynMap,
        g: DynMap,
    ) -> Result<Self> {
        let sys = Self {
            state_dim,
            input_dim,
            output_dim,
            f,
            g,
        };
        let x0 = DVector::zeros(state_dim);
        let u0 = DVector::zeros(input_dim);
        let f0 = sys.derivative(&x0, &u0);
        if f0.len() != state_dim {
            return Err(Error::Dimension("f output length mismatch".into()));
        }
        if f0.norm() >= 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "f(0,0) must vanish at the origin equilibrium, got norm {}",
                f0.norm()
            )));
        }
        Ok(sys)
    }

    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, u)
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.g)(x, u)
    }

    /// Wraps a linear model as a nonlinear system (used for cross-checking
    /// the two simulation paths).
    pub fn from_linear(model: &StateSpaceModel) -> Self {
        let (a, b) = (model.a.clone(), model.b.clone());
        let (c, d) = (model.c.clone(), model.d.clone());
        Self {
            state_dim: model.state_dim(),
            input_dim: model.input_dim(),
            output_dim: model.output_dim(),
            f: Box::new(move |x, u| &a * x + &b * u),
            g: Box::new(move |x, u| &c * x + &d * u),
        }
    }
}

/// The two-state single-input benchmark system
/// `ẋ₁ = −x₁² + x₂`, `ẋ₂ = −x₁ − x₂ + (0.5x₁ + 1)u`,
/// `y = x₁ + x₂ + (0.5x₁ + 1)u`.
pub fn example1_system() -> NonlinearSystem {
    NonlinearSystem::new(
        2,
        1,
        1,
        Box::new(|x, u| {
            let (x1, x2, uu) = (x[0], x[1], u[0]);
            DVector::from_vec(vec![-x1 * x1 + x2, -x1 - x2 + (0.5 * x1 + 1.0) * uu])
        }),
        Box::new(|x, u| {
            let (x1, x2, uu) = (x[0], x[1], u[0]);
            DVector::from_vec(vec![x1 + x2 + (0.5 * x1 + 1.0) * uu])
        }),
    )
    .expect("benchmark system has its equilibrium at the origin")
}

/// Excitation waveform. All kinds are deterministic functions of their
/// parameters; identical parameters produce identical sample sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    Zero,
    Step { level: f64 },
    Multisine {
        amplitudes: Vec<f64>,
        /// angular frequencies, rad/s
        frequencies: Vec<f64>,
        phases: Vec<f64>,
    },
    /// Pseudo-random binary sequence from a 16-bit Galois LFSR with
    /// polynomial x¹⁶ + x¹⁴ + x¹³ + x¹¹ + 1 (mask 0xB400); each bit is held
    /// for `hold_samples` samples and mapped to ±amplitude.
    Prbs {
        amplitude: f64,
        seed: u16,
        hold_samples: usize,
    },
}

/// A sampled excitation: kind + duration + sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub kind: SignalKind,
    pub duration: f64,
    pub dt: f64,
}

impl InputSignal {
    pub fn new(kind: SignalKind, duration: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 || duration <= 0.0 || !dt.is_finite() || !duration.is_finite() {
            return Err(Error::InvalidArgument(
                "duration and dt must be positive".into(),
            ));
        }
        if let SignalKind::Multisine {
            amplitudes,
            frequencies,
            phases,
        } = &kind
        {
            if amplitudes.len() != frequencies.len() || amplitudes.len() != phases.len() {
                return Err(Error::Dimension(
                    "multisine component vectors must have equal length".into(),
                ));
            }
        }
        if let SignalKind::Prbs { hold_samples, .. } = &kind {
            if *hold_samples == 0 {
                return Err(Error::InvalidArgument("hold_samples must be >= 1".into()));
            }
        }
        Ok(Self { kind, duration, dt })
    }

    pub fn sample_count(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    fn scalar_samples(&self, channel: usize) -> Vec<f64> {
        let t_count = self.sample_count();
        match &self.kind {
            SignalKind::Zero => vec![0.0; t_count],
            SignalKind::Step { level } => vec![*level; t_count],
            SignalKind::Multisine {
                amplitudes,
                frequencies,
                phases,
            } => {
                // channels beyond the first get a golden-ratio phase rotation
                let shift = channel as f64 * 2.0 * std::f64::consts::PI * 0.381_966_011_250_105;
                (0..t_count)
                    .map(|k| {
                        let t = k as f64 * self.dt;
                        amplitudes
                            .iter()
                            .zip(frequencies)
                            .zip(phases)
                            .map(|((a, w), ph)| a * (w * t + ph + shift).sin())
                            .sum()
                    })
                    .collect()
            }
            SignalKind::Prbs {
                amplitude,
                seed,
                hold_samples,
            } => {
                let mut state = seed.wrapping_add((channel as u16).wrapping_mul(0x9E37));
                if state == 0 {
                    state = 0xACE1;
                }
                let mut out = Vec::with_capacity(t_count);
                let mut bit = state & 1;
                for k in 0..t_count {
                    if k % hold_samples == 0 && k > 0 {
                        state = if state & 1 == 1 {
                            (state >> 1) ^ 0xB400
                        } else {
                            state >> 1
                        };
                        bit = state & 1;
                    }
                    out.push(if bit == 1 { *amplitude } else { -*amplitude });
                }
                out
            }
        }
    }

    /// Materializes the signal as a `T x m` sample matrix.
    pub fn samples(&self, m: usize) -> DMatrix<f64> {
        let t_count = self.sample_count();
        let mut u = DMatrix::zeros(t_count, m);
        for c in 0..m {
            let col = self.scalar_samples(c);
            for (k, v) in col.iter().enumerate() {
                u[(k, c)] = *v;
            }
        }
        u
    }
}

fn check_finite_state(x: &DVector<f64>, k: usize, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { index: k, time: t })
    }
}

/// Classical fixed-step RK4 with zero-order-hold input, sampled at the
/// input grid. States are stored in the returned trajectory.
///
/// The step size must be small enough for RK4 stability on the given
/// system; that is the caller's choice.
pub fn simulate_nonlinear(
    sys: &NonlinearSystem,
    x0: &DVector<f64>,
    signal: &InputSignal,
) -> Result<Trajectory> {
    let u = signal.samples(sys.input_dim);
    simulate_nonlinear_from(sys, x0, &u, 0.0, signal.dt)
}

/// RK4 integration against explicit input samples (`T x m`).
pub fn simulate_nonlinear_from(
    sys: &NonlinearSystem,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
    t0: f64,
    dt: f64,
) -> Result<Trajectory> {
    if x0.len() != sys.state_dim {
        return Err(Error::Dimension("x0 length must match state dimension".into()));
    }
    if u.ncols() != sys.input_dim {
        return Err(Error::Dimension("input columns must match input dimension".into()));
    }
    let t_count = u.nrows();
    let mut xs = DMatrix::zeros(t_count, sys.state_dim);
    let mut ys = DMatrix::zeros(t_count, sys.output_dim);
    let mut x = x0.clone();
    for k in 0..t_count {
        check_finite_state(&x, k, t0 + dt * k as f64)?;
        let uk = u.row(k).transpose();
        let y = sys.output(&x, &uk);
        xs.row_mut(k).copy_from(&x.transpose());
        ys.row_mut(k).copy_from(&y.transpose());
        if k + 1 == t_count {
            break;
        }
        let k1 = sys.derivative(&x, &uk);
        let k2 = sys.derivative(&(&x + &k1 * (0.5 * dt)), &uk);
        let k3 = sys.derivative(&(&x + &k2 * (0.5 * dt)), &uk);
        let k4 = sys.derivative(&(&x + &k3 * dt), &uk);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Trajectory::new(t0, dt, u.clone(), ys, Some(xs))
}

/// Simulates a linear model with exact zero-order-hold discretization, so
/// the sampled response has no truncation error at the grid points.
pub fn simulate_linear(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    signal: &InputSignal,
) -> Result<Trajectory> {
    let u = signal.samples(model.input_dim());
    simulate_linear_from(model, x0, &u, 0.0, signal.dt)
}

/// Exact ZOH stepping against explicit input samples.
pub fn simulate_linear_from(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
    t0: f64,
    dt: f64,
) -> Result<Trajectory> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension("x0 length must match state dimension".into()));
    }
    if u.ncols() != model.input_dim() {
        return Err(Error::Dimension("input columns must match input dimension".into()));
    }
    let (ad, bd) = zoh_discretize(&model.a, &model.b, dt);
    let t_count = u.nrows();
    let mut xs = DMatrix::zeros(t_count, model.state_dim());
    let mut ys = DMatrix::zeros(t_count, model.output_dim());
    let mut x = x0.clone();
    for k in 0..t_count {
        check_finite_state(&x, k, t0 + dt * k as f64)?;
        let uk = u.row(k).transpose();
        let y = &model.c * &x + &model.d * &uk;
        xs.row_mut(k).copy_from(&x.transpose());
        ys.row_mut(k).copy_from(&y.transpose());
        if k + 1 == t_count {
            break;
        }
        x = &ad * x + &bd * uk;
    }
    Trajectory::new(t0, dt, u.clone(), ys, Some(xs))
}

/// Result of [`empirical_supply_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyCheck {
    /// Minimum over samples of `s(k) = yᵀQy + uᵀRu + 2yᵀSu − ρxᵀx − νuᵀu`.
    pub min_slack: f64,
    /// First sample index with negative slack, if any.
    pub violating_index: Option<usize>,
}

/// Evaluates the (strict) supply inequality along a trajectory. With
/// `rho = nu = 0` this checks plain nonnegativity of the supply rate; a
/// positive `rho` requires recorded states.
pub fn empirical_supply_check(
    traj: &Trajectory,
    sr: &SupplyRate,
    rho: f64,
    nu: f64,
) -> Result<SupplyCheck> {
    if sr.output_dim() != traj.output_dim() || sr.input_dim() != traj.input_dim() {
        return Err(Error::Dimension("supply rate does not match trajectory".into()));
    }
    if rho > 0.0 && traj.x.is_none() {
        return Err(Error::InvalidArgument(
            "state samples are required to check a positive rho".into(),
        ));
    }
    let mut min_slack = f64::INFINITY;
    let mut violating_index = None;
    for k in 0..traj.len() {
        let y = traj.y.row(k).transpose();
        let u = traj.u.row(k).transpose();
        let mut slack = sr.evaluate(&y, &u) - nu * u.norm_squared();
        if rho > 0.0 {
            let x = traj.x.as_ref().expect("checked above").row(k).transpose();
            slack -= rho * x.norm_squared();
        }
        if slack < min_slack {
            min_slack = slack;
        }
        if slack < 0.0 && violating_index.is_none() {
            violating_index = Some(k);
        }
    }
    Ok(SupplyCheck {
        min_slack,
        violating_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_supply_rate, SupplyPreset};
    use approx::assert_relative_eq;

    fn decay_system() -> NonlinearSystem {
        NonlinearSystem::new(
            1,
            1,
            1,
            Box::new(|x, _| -x.clone()),
            Box::new(|x, _| x.clone()),
        )
        .unwrap()
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let sys = decay_system();
        let sig = InputSignal::new(SignalKind::Zero, 1.0, 1e-3).unwrap();
        let tr = simulate_nonlinear(&sys, &DVector::from_element(1, 1.0), &sig).unwrap();
        let last = tr.y[(tr.len() - 1, 0)];
        assert_relative_eq!(last, (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn rk4_order_is_four() {
        let sys = decay_system();
        let x0 = DVector::from_element(1, 1.0);
        let exact = (-1.0f64).exp();
        let mut errs = Vec::new();
        for dt in [0.1, 0.05] {
            let sig = InputSignal::new(SignalKind::Zero, 1.0, dt).unwrap();
            let tr = simulate_nonlinear(&sys, &x0, &sig).unwrap();
            errs.push((tr.y[(tr.len() - 1, 0)] - exact).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (12.0..=20.0).contains(&ratio),
            "halving dt gave error ratio {ratio}"
        );
    }

    #[test]
    fn example1_equilibrium_and_evaluations() {
        let sys = example1_system();
        let zero = DVector::zeros(2);
        assert_eq!(sys.derivative(&zero, &DVector::zeros(1)).norm(), 0.0);
        let g = sys.output(&DVector::from_vec(vec![1.0, 1.0]), &DVector::zeros(1));
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-15);
        let f = sys.derivative(
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::from_element(1, 2.0),
        );
        assert_relative_eq!(f[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(f[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn example1_zero_input_stays_at_origin() {
        let sys = example1_system();
        let sig = InputSignal::new(SignalKind::Zero, 1.0, 1e-3).unwrap();
        let tr = simulate_nonlinear(&sys, &DVector::zeros(2), &sig).unwrap();
        assert_eq!(tr.y.amax(), 0.0);
    }

    #[test]
    fn nonorigin_equilibrium_rejected() {
        let bad = NonlinearSystem::new(
            1,
            1,
            1,
            Box::new(|_, _| DVector::from_element(1, 1.0)),
            Box::new(|x, _| x.clone()),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn linear_zoh_is_exact() {
        let model = StateSpaceModel::siso(-1.0, 0.0, 1.0, 0.0);
        let sig = InputSignal::new(SignalKind::Zero, 1.0, 0.1).unwrap();
        let tr = simulate_linear(&model, &DVector::from_element(1, 1.0), &sig).unwrap();
        for k in 0..tr.len() {
            assert_relative_eq!(tr.y[(k, 0)], (-0.1 * k as f64).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_feedthrough_step() {
        let model = StateSpaceModel::siso(-1.0, 0.0, 0.0, 2.0);
        let sig = InputSignal::new(SignalKind::Step { level: 1.0 }, 0.5, 0.1).unwrap();
        let tr = simulate_linear(&model, &DVector::zeros(1), &sig).unwrap();
        for k in 0..tr.len() {
            assert_relative_eq!(tr.y[(k, 0)], 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_and_nonlinear_paths_agree() {
        let model = StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let sig = InputSignal::new(
            SignalKind::Multisine {
                amplitudes: vec![0.5, 0.3],
                frequencies: vec![1.0, 2.7],
                phases: vec![0.2, 1.1],
            },
            2.0,
            1e-3,
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.1, -0.2]);
        let lin = simulate_linear(&model, &x0, &sig).unwrap();
        let nl = simulate_nonlinear(&NonlinearSystem::from_linear(&model), &x0, &sig).unwrap();
        let dev = (lin.y - nl.y).amax();
        assert!(dev < 1e-6, "max deviation {dev}");
    }

    #[test]
    fn divergence_reports_first_bad_index() {
        let sys = NonlinearSystem::new(
            1,
            1,
            1,
            Box::new(|x, _| x.map(|v| v * v) * 10.0),
            Box::new(|x, _| x.clone()),
        )
        .unwrap();
        let sig = InputSignal::new(SignalKind::Zero, 5.0, 0.5).unwrap();
        let err = simulate_nonlinear(&sys, &DVector::from_element(1, 5.0), &sig);
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn prbs_and_multisine_are_deterministic() {
        let sig = InputSignal::new(
            SignalKind::Prbs {
                amplitude: 1.0,
                seed: 42,
                hold_samples: 3,
            },
            1.0,
            0.01,
        )
        .unwrap();
        assert_eq!(sig.samples(1), sig.samples(1));
        let values = sig.samples(1);
        assert!(values.iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn supply_check_zero_trajectory() {
        let u = DMatrix::zeros(10, 1);
        let y = DMatrix::zeros(10, 1);
        let tr = Trajectory::new(0.0, 0.1, u, y, None).unwrap();
        let sr = make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap();
        let chk = empirical_supply_check(&tr, &sr, 0.0, 0.0).unwrap();
        assert_eq!(chk.min_slack, 0.0);
        assert_eq!(chk.violating_index, None);
    }

    #[test]
    fn supply_check_identity_map_is_square() {
        let u = DMatrix::from_fn(8, 1, |k, _| (k as f64) - 3.0);
        let y = u.clone();
        let tr = Trajectory::new(0.0, 0.1, u.clone(), y, None).unwrap();
        let sr = make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap();
        let chk = empirical_supply_check(&tr, &sr, 0.0, 0.0).unwrap();
        let expect = u.column(0).iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(chk.min_slack, expect, epsilon = 1e-15);
    }

    #[test]
    fn supply_check_needs_states_for_rho() {
        let tr = Trajectory::new(0.0, 0.1, DMatrix::zeros(4, 1), DMatrix::zeros(4, 1), None)
            .unwrap();
        let sr = make_supply_rate(SupplyPreset::Passivity, 1, 1).unwrap();
        assert!(empirical_supply_check(&tr, &sr, 0.1, 0.0).is_err());
    }

    #[test]
    fn example1_is_empirically_strictly_passive_for_small_inputs() {
        // the sample-wise check needs a sign-definite excitation; a small
        // step keeps y·u nonnegative along the whole response
        let sys = example1_system();
        let sig = InputSignal::new(SignalKind::Step { level: 0.2 }, 10.0, 1e-3).unwrap();
        let tr = simulate_nonlinear(&sys, &DVector::zeros(2), &sig).unwrap();
        let sr = make_supply_rate(SupplyPreset::StrictPassivity { a: 0.01, b: 0.01 }, 1, 1)
            .unwrap();
        let chk = empirical_supply_check(&tr, &sr, 0.0, 0.0).unwrap();
        assert!(
            chk.min_slack >= 0.0,
            "strict passivity violated: slack {}",
            chk.min_slack
        );
    }
}
