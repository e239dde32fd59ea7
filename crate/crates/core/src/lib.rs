//! Identification of strictly QSR-dissipative linear models from
//! time-domain input-output data.
//!
//! The pipeline has four stages:
//!
//! 1. [`simulate`] generates trajectories, either from a built-in
//!    nonlinear benchmark or from linear models (exact zero-order-hold).
//! 2. [`sysid`] fits a continuous-time baseline model and estimates the
//!    output-sensitivity constant from trajectory pairs.
//! 3. [`lmi`] decides strict dissipativity of a linear model against a
//!    quadratic supply rate through a deterministic interior-point
//!    feasibility solve, with independent certificate verification and a
//!    frequency-domain cross-check.
//! 4. [`perturb`] searches for the smallest all-ones output-matrix
//!    perturbation `ΔC = γ·1` that makes an infeasible baseline strictly
//!    dissipative, and derives the locality radius and fit-degradation
//!    bound of the perturbed model.

pub mod error;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod perturb;
pub mod simulate;
pub mod sysid;

pub use error::{Error, Result};
pub use linalg::spectral_norm;
pub use lmi::{
    assemble_lmi, frequency_domain_oracle, log_grid, solve_feasibility, verify_certificate,
    CertificateCheck, FeasTolerances, FeasibilityOutcome, FrequencyOracle, LmiBounds, LmiProblem,
};
pub use model::{
    composite_matrices, make_supply_rate, perturbation_alpha, rank_one_perturbation,
    CompositeMatrices, Dataset, DissipativityCertificate, IterationRecord, PerturbationReport,
    SearchStage, StateSpaceModel, SupplyPreset, SupplyRate, Trajectory,
};
pub use perturb::{
    check_constraint_l1, check_constraint_l2, constraint_l1_rhs, constraint_l2_rhs,
    epsilon_radius, fit_degradation, local_margins, probe_gamma, run_algorithm1,
    AlgorithmConfig, ConstraintPolicy, FitDegradation, LocalMargins,
};
pub use simulate::{
    empirical_supply_check, example1_system, simulate_linear, simulate_linear_from,
    simulate_nonlinear, simulate_nonlinear_from, InputSignal, NonlinearSystem, SignalKind,
    SupplyCheck,
};
pub use sysid::{
    estimate_initial_state, estimate_lipschitz, estimate_lipschitz_with, fit_baseline,
    markov_parameters, nrmse_percent, residual_on, FitConfig, FitMethod, FitResult,
    LipschitzEstimate, SignalMetric,
};
