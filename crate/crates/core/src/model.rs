//! Domain types: state-space models, quadratic supply rates and their
//! composite matrices, sampled trajectories, and the certificate/report
//! objects produced by the feasibility and perturbation stages.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, spectral_norm, symmetrized};

/// Continuous-time LTI quadruple `ẋ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("A must be square".into()));
        }
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        let m = b.ncols();
        let p = c.nrows();
        if m == 0 || p == 0 {
            return Err(Error::Dimension("input/output dimensions must be positive".into()));
        }
        if d.nrows() != p || d.ncols() != m {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {p}x{m}",
                d.nrows(),
                d.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if !all_finite(mat) {
                return Err(Error::NonFinite(format!("matrix {name}")));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Convenience constructor for single-input single-output first-order
    /// models, used heavily in tests.
    pub fn siso(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
        )
        .expect("scalar model is always consistent")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_hurwitz(&self) -> bool {
        self.a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
    }

    /// Returns the model with `C` replaced by `C + ΔC`.
    pub fn with_output_perturbation(&self, delta_c: &DMatrix<f64>) -> Result<Self> {
        if delta_c.shape() != self.c.shape() {
            return Err(Error::Dimension("ΔC shape must match C".into()));
        }
        Self::new(
            self.a.clone(),
            self.b.clone(),
            &self.c + delta_c,
            self.d.clone(),
        )
    }
}

/// Supply-rate presets. All presets couple inputs and outputs through
/// identity blocks and therefore require `p == m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum SupplyPreset {
    Passivity,
    StrictPassivity { a: f64, b: f64 },
    L2Gain { gamma: f64 },
    Conic { center: f64, radius: f64 },
    Sector { a: f64, b: f64 },
}

/// Quadratic supply rate `s(u, y) = yᵀQy + uᵀRu + 2yᵀSu`.
///
/// `Q` and `R` are symmetrized on construction; downstream code assumes
/// exact symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyRate {
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl SupplyRate {
    pub fn new(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let p = q.nrows();
        let m = r.nrows();
        if q.ncols() != p || r.ncols() != m {
            return Err(Error::Dimension("Q and R must be square".into()));
        }
        if s.nrows() != p || s.ncols() != m {
            return Err(Error::Dimension(format!(
                "S is {}x{}, expected {p}x{m}",
                s.nrows(),
                s.ncols()
            )));
        }
        for (name, mat) in [("Q", &q), ("S", &s), ("R", &r)] {
            if !all_finite(mat) {
                return Err(Error::NonFinite(format!("supply-rate matrix {name}")));
            }
        }
        Ok(Self {
            q: symmetrized(&q),
            s,
            r: symmetrized(&r),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Evaluates the supply rate at a single sample.
    pub fn evaluate(&self, y: &nalgebra::DVector<f64>, u: &nalgebra::DVector<f64>) -> f64 {
        (y.transpose() * &self.q * y)[(0, 0)]
            + (u.transpose() * &self.r * u)[(0, 0)]
            + 2.0 * (y.transpose() * &self.s * u)[(0, 0)]
    }
}

/// Builds the `(Q, S, R)` triple for a named preset with output dimension
/// `p` and input dimension `m`.
pub fn make_supply_rate(preset: SupplyPreset, p: usize, m: usize) -> Result<SupplyRate> {
    if p != m {
        return Err(Error::Dimension(format!(
            "identity-coupled presets need p == m, got p = {p}, m = {m}"
        )));
    }
    if p == 0 {
        return Err(Error::Dimension("dimensions must be positive".into()));
    }
    let eye = DMatrix::<f64>::identity(p, p);
    let zero = DMatrix::<f64>::zeros(p, p);
    let (q, s, r) = match preset {
        SupplyPreset::Passivity => (zero.clone(), &eye * 0.5, zero),
        SupplyPreset::StrictPassivity { a, b } => {
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::InvalidArgument(
                    "strict passivity needs a > 0 and b > 0".into(),
                ));
            }
            (&eye * -a, &eye * 0.5, &eye * -b)
        }
        SupplyPreset::L2Gain { gamma } => {
            if gamma <= 0.0 {
                return Err(Error::InvalidArgument("L2 gain bound must be positive".into()));
            }
            (&eye * (-1.0 / gamma), zero, &eye * gamma)
        }
        SupplyPreset::Conic { center, radius } => {
            if radius <= 0.0 {
                return Err(Error::InvalidArgument("cone radius must be positive".into()));
            }
            (
                &eye * -1.0,
                &eye * center,
                &eye * (radius * radius - center * center),
            )
        }
        SupplyPreset::Sector { a, b } => (&eye * -1.0, &eye * (a + b), &eye * (-a * b)),
    };
    SupplyRate::new(q, s, r)
}

/// Cache of `Ŝ = CᵀS + CᵀQD` and `R̂ = R + DᵀS + SᵀD + DᵀQD`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeMatrices {
    pub s_hat: DMatrix<f64>,
    pub r_hat: DMatrix<f64>,
}

/// Computes the composite matrices for a model/supply-rate pair. `R̂` is
/// symmetrized to kill round-off asymmetry.
pub fn composite_matrices(model: &StateSpaceModel, sr: &SupplyRate) -> Result<CompositeMatrices> {
    if sr.output_dim() != model.output_dim() || sr.input_dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "supply rate is ({}, {}), model is ({}, {})",
            sr.output_dim(),
            sr.input_dim(),
            model.output_dim(),
            model.input_dim()
        )));
    }
    let c_t = model.c.transpose();
    let s_hat = &c_t * &sr.s + &c_t * &sr.q * &model.d;
    let d_t = model.d.transpose();
    let r_hat = &sr.r + &d_t * &sr.s + sr.s.transpose() * &model.d + &d_t * &sr.q * &model.d;
    Ok(CompositeMatrices {
        s_hat,
        r_hat: symmetrized(&r_hat),
    })
}

/// Uniformly sampled input-output record. `u` is `T x m`, `y` is `T x p`,
/// optional states `x` are `T x n` (simulator output only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub x: Option<DMatrix<f64>>,
}

impl Trajectory {
    pub fn new(
        t0: f64,
        dt: f64,
        u: DMatrix<f64>,
        y: DMatrix<f64>,
        x: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if u.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "u has {} rows, y has {}",
                u.nrows(),
                y.nrows()
            )));
        }
        if u.nrows() < 2 {
            return Err(Error::InsufficientData("need at least 2 samples".into()));
        }
        if !all_finite(&u) || !all_finite(&y) {
            return Err(Error::NonFinite("trajectory samples".into()));
        }
        if let Some(ref xs) = x {
            if xs.nrows() != u.nrows() {
                return Err(Error::Dimension("state rows must match sample count".into()));
            }
            if !all_finite(xs) {
                return Err(Error::NonFinite("trajectory states".into()));
            }
        }
        Ok(Self { t0, dt, u, y, x })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }
}

/// Nonempty collection of trajectories sharing input/output dimensions and
/// sample period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InsufficientData("dataset must be nonempty".into()))?;
        let (m, p, dt) = (first.input_dim(), first.output_dim(), first.dt);
        for (i, tr) in trajectories.iter().enumerate() {
            if tr.input_dim() != m || tr.output_dim() != p {
                return Err(Error::Dimension(format!(
                    "trajectory {i} has dimensions ({}, {}), expected ({m}, {p})",
                    tr.input_dim(),
                    tr.output_dim()
                )));
            }
            if (tr.dt - dt).abs() > 1e-12 * dt.max(1.0) {
                return Err(Error::Dimension(format!(
                    "trajectory {i} has dt = {}, expected {dt}",
                    tr.dt
                )));
            }
        }
        Ok(Self { trajectories })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.trajectories[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.trajectories[0].output_dim()
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt
    }

    pub fn total_samples(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Feasibility witness `(P, ρ, ν)` together with the achieved margin
/// (largest eigenvalue of the assembled feasibility block; negative for
/// strict feasibility).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityCertificate {
    pub p: DMatrix<f64>,
    pub rho: f64,
    pub nu: f64,
    pub margin: f64,
}

/// Stage tag for [`IterationRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStage {
    Baseline,
    Prescan,
    Bisection,
    RhoEscalation,
}

/// One inner-solve record from the perturbation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: SearchStage,
    pub gamma: f64,
    pub rho: f64,
    pub margin: f64,
    pub feasible: bool,
}

/// Result of the output-matrix perturbation stage: the scalar magnitude
/// `γ` with `ΔC = γ·1`, the certified perturbed model, and the locality /
/// fit-degradation quantities derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub gamma: f64,
    pub delta_c: DMatrix<f64>,
    /// `α = ‖ΔC‖₂²`
    pub alpha: f64,
    pub certificate: DissipativityCertificate,
    /// Radius of the neighborhood where the certified model locally bounds
    /// the data-generating system.
    pub epsilon: f64,
    /// Fit-degradation factor `β = α ε² / δ̄_y`.
    pub beta: f64,
    /// Baseline squared output residual `δ̄_y` on the training data.
    pub baseline_error: f64,
    pub iterations: Vec<IterationRecord>,
    /// The perturbed model `(A, B, C̄+ΔC, D)`.
    pub model: StateSpaceModel,
    pub eps_g: f64,
    pub l_g: f64,
    pub rho_hat: f64,
    pub nu_hat: f64,
    pub l1_check_passed: bool,
    pub l2_check_passed: bool,
    /// Outcome of the plain feasibility check on the unperturbed baseline.
    pub baseline_lmi_feasible: bool,
    /// True when the prescan observed a feasible gamma followed by an
    /// infeasible larger one.
    pub non_monotonic_gamma: bool,
}

impl PerturbationReport {
    /// Guaranteed squared-residual bound `δ̃_y = (1+β)·δ̄_y`.
    pub fn delta_y_tilde(&self) -> f64 {
        (1.0 + self.beta) * self.baseline_error
    }
}

/// Builds `ΔC = γ·1` for a `p x n` output matrix.
pub fn rank_one_perturbation(gamma: f64, p: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_element(p, n, gamma)
}

/// `‖γ·1‖₂² = γ²·p·n`, verified against the numeric norm in tests.
pub fn perturbation_alpha(delta_c: &DMatrix<f64>) -> Result<f64> {
    let s = spectral_norm(delta_c)?;
    Ok(s * s)
}
