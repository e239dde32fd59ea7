//! Baseline identification: ARX least squares (SISO) and Hankel-SVD
//! realization from estimated impulse-response coefficients, with exact
//! discrete-to-continuous conversion, per-trajectory initial-state
//! estimation, and the pairwise output-sensitivity (Lipschitz) estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{balance_realization, zoh_discretize, zoh_undiscretize};
use crate::model::{Dataset, StateSpaceModel};
use crate::simulate::simulate_linear_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    ArxLs,
    HankelSvd,
}

/// Identification settings. `hankel_rows`/`hankel_cols` apply to the
/// Hankel-SVD method, `regularization` to the ARX least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub order: usize,
    pub method: FitMethod,
    pub hankel_rows: usize,
    pub hankel_cols: usize,
    pub regularization: f64,
    /// Apply a Gramian-balancing similarity to the identified model (no
    /// effect on its input-output behavior).
    pub balance: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            order: 2,
            method: FitMethod::ArxLs,
            hankel_rows: 20,
            hankel_cols: 20,
            regularization: 0.0,
            balance: true,
        }
    }
}

/// Identified baseline plus its training-data residual `δ̄_y = Σ‖ȳ−ŷ‖²`
/// and the normalized fit percentage per trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: StateSpaceModel,
    pub delta_y_bar: f64,
    pub nrmse_fit: Vec<f64>,
}

/// Normalized fit percentage `100·(1 − ‖y−ŷ‖/‖y−mean(y)‖)` over all
/// channels of a trajectory.
pub fn nrmse_percent(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> f64 {
    let mut centered = y.clone();
    for c in 0..y.ncols() {
        let mean = y.column(c).mean();
        for r in 0..y.nrows() {
            centered[(r, c)] -= mean;
        }
    }
    let denom = centered.norm();
    if denom == 0.0 {
        return if (y - y_hat).norm() == 0.0 { 100.0 } else { f64::NEG_INFINITY };
    }
    100.0 * (1.0 - (y - y_hat).norm() / denom)
}

/// Least-squares estimate of the initial state that best explains `y`
/// under the model's exact ZOH response to `u`.
pub fn estimate_initial_state(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let n = model.state_dim();
    let p = model.output_dim();
    let forced = simulate_linear_from(model, &DVector::zeros(n), u, 0.0, dt)?;
    let resid = y - &forced.y;
    let (ad, _) = zoh_discretize(&model.a, &model.b, dt);
    let rows = u.nrows();
    let mut obs = DMatrix::zeros(rows * p, n);
    let mut rhs = DVector::zeros(rows * p);
    let mut phi = DMatrix::identity(n, n);
    for k in 0..rows {
        let block = &model.c * &phi;
        obs.view_mut((k * p, 0), (p, n)).copy_from(&block);
        for i in 0..p {
            rhs[k * p + i] = resid[(k, i)];
        }
        phi = &ad * phi;
    }
    let svd = nalgebra::SVD::new(obs, true, true);
    svd.solve(&rhs, 1e-12)
        .map_err(|e| Error::Numerical(format!("initial-state least squares: {e}")))
}

/// Simulates the model on every trajectory (initial state re-estimated per
/// trajectory) and returns `(δ̄_y, per-trajectory NRMSE)`.
pub fn residual_on(model: &StateSpaceModel, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let mut delta = 0.0;
    let mut fits = Vec::with_capacity(data.len());
    for tr in data.trajectories() {
        let x0 = estimate_initial_state(model, &tr.u, &tr.y, tr.dt)?;
        let sim = simulate_linear_from(model, &x0, &tr.u, tr.t0, tr.dt)?;
        delta += (&tr.y - &sim.y).norm_squared();
        fits.push(nrmse_percent(&tr.y, &sim.y));
    }
    Ok((delta, fits))
}

/// Continuous-time Markov parameters `D, CB, CAB, …, CA^{count-2}B`.
pub fn markov_parameters(model: &StateSpaceModel, count: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(model.d.clone());
    let mut ak_b = model.b.clone();
    for _ in 1..count {
        out.push(&model.c * &ak_b);
        ak_b = &model.a * ak_b;
    }
    out
}

fn identifiability_floor(n: usize, m: usize, p: usize) -> usize {
    10 * (n * (n + m + p) + p * m)
}

/// Fits a continuous-time baseline model of the requested order.
///
/// Both methods identify a discrete-time realization first and convert it
/// through the principal logarithm of the ZOH map; a logarithm failure
/// (discrete eigenvalue on the closed negative real axis) is surfaced, not
/// patched.
pub fn fit_baseline(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    if cfg.order == 0 {
        return Err(Error::InvalidArgument("model order must be >= 1".into()));
    }
    let (m, p) = (data.input_dim(), data.output_dim());
    let floor = identifiability_floor(cfg.order, m, p);
    if data.total_samples() < floor {
        return Err(Error::InsufficientData(format!(
            "{} samples < identifiability floor {floor}",
            data.total_samples()
        )));
    }
    let dt = data.dt();
    let (ad, bd, cd, dd) = match cfg.method {
        FitMethod::ArxLs => arx_realize(data, cfg)?,
        FitMethod::HankelSvd => hankel_realize(data, cfg)?,
    };
    // A numerically vanishing dynamic path (pure feedthrough data) leaves
    // the discrete pole locations meaningless; collapse to a static model
    // with an unexcited stable state instead of taking log(≈0). The
    // threshold sits above the ridge-induced bias floor.
    let dyn_scale = bd.amax().min(cd.amax());
    if dyn_scale <= 1e-6 * dd.amax().max(1.0) {
        let n = cfg.order;
        let model = StateSpaceModel::new(
            -DMatrix::identity(n, n),
            DMatrix::zeros(n, m),
            DMatrix::zeros(p, n),
            dd,
        )?;
        let (delta_y_bar, nrmse_fit) = residual_on(&model, data)?;
        return Ok(FitResult {
            model,
            delta_y_bar,
            nrmse_fit,
        });
    }
    let (a, b) = zoh_undiscretize(&ad, &bd, dt)?;
    let (a, b, c) = if cfg.balance {
        balance_realization(&a, &b, &cd)
    } else {
        (a, b, cd)
    };
    let model = StateSpaceModel::new(a, b, c, dd)?;
    let (delta_y_bar, nrmse_fit) = residual_on(&model, data)?;
    Ok(FitResult {
        model,
        delta_y_bar,
        nrmse_fit,
    })
}

/// SISO ARX least squares realized in observable canonical form.
fn arx_realize(
    data: &Dataset,
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if data.input_dim() != 1 || data.output_dim() != 1 {
        return Err(Error::InvalidArgument(
            "the ARX path is single-input single-output; use the Hankel-SVD method for MIMO"
                .into(),
        ));
    }
    let n = cfg.order;
    let cols = 2 * n + 1;
    let mut rows = 0usize;
    for tr in data.trajectories() {
        rows += tr.len().saturating_sub(n);
    }
    if rows < cols {
        return Err(Error::InsufficientData("too few regression rows".into()));
    }
    let mut x = DMatrix::zeros(rows, cols);
    let mut yv = DVector::zeros(rows);
    let mut r = 0usize;
    for tr in data.trajectories() {
        for k in n..tr.len() {
            for i in 1..=n {
                x[(r, i - 1)] = -tr.y[(k - i, 0)];
            }
            for j in 0..=n {
                x[(r, n + j)] = tr.u[(k - j, 0)];
            }
            yv[r] = tr.y[(k, 0)];
            r += 1;
        }
    }
    // ridge solved in augmented form [X; √λ·I] to avoid squaring the
    // conditioning through normal equations
    let theta = if cfg.regularization > 0.0 {
        let sqrt_l = cfg.regularization.sqrt();
        let mut x_aug = DMatrix::zeros(rows + cols, cols);
        x_aug.view_mut((0, 0), (rows, cols)).copy_from(&x);
        for i in 0..cols {
            x_aug[(rows + i, i)] = sqrt_l;
        }
        let mut y_aug = DVector::zeros(rows + cols);
        y_aug.rows_mut(0, rows).copy_from(&yv);
        let svd = nalgebra::SVD::new(x_aug, true, true);
        let smax = svd.singular_values.max();
        svd.solve(&y_aug, 1e-15 * smax)
            .map_err(|e| Error::Numerical(format!("ARX least squares: {e}")))?
    } else {
        let svd = nalgebra::SVD::new(x, true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-10 * smax {
            return Err(Error::RankDeficient(format!(
                "regressor condition {:e}; the data cannot support order {n} \
                 (pole-zero cancellation or poor excitation)",
                smax / smin.max(f64::MIN_POSITIVE)
            )));
        }
        svd.solve(&yv, 1e-14 * smax)
            .map_err(|e| Error::Numerical(format!("ARX least squares: {e}")))?
    };

    let a_coef: Vec<f64> = theta.iter().take(n).cloned().collect();
    let b0 = theta[n];
    // strictly proper numerator after removing the feedthrough
    let beta: Vec<f64> = (1..=n).map(|i| theta[n + i] - b0 * a_coef[i - 1]).collect();

    let mut ad = DMatrix::zeros(n, n);
    for i in 0..n {
        ad[(i, 0)] = -a_coef[i];
        if i + 1 < n {
            ad[(i, i + 1)] = 1.0;
        }
    }
    let bd = DMatrix::from_iterator(n, 1, beta.into_iter());
    let mut cd = DMatrix::zeros(1, n);
    cd[(0, 0)] = 1.0;
    let dd = DMatrix::from_element(1, 1, b0);
    Ok((ad, bd, cd, dd))
}

/// FIR estimation followed by a Ho-Kalman / eigensystem-realization step:
/// block Hankel of the estimated Markov parameters, SVD truncation at the
/// requested order.
fn hankel_realize(
    data: &Dataset,
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = cfg.order;
    let (rows_blk, cols_blk) = (cfg.hankel_rows, cfg.hankel_cols);
    if rows_blk < n || cols_blk < n {
        return Err(Error::InvalidArgument(format!(
            "hankel dimensions ({rows_blk}, {cols_blk}) too small for order {n}"
        )));
    }
    let (m, p) = (data.input_dim(), data.output_dim());
    let lag = rows_blk + cols_blk; // FIR length beyond the feedthrough tap
    let fir = estimate_fir(data, lag)?;

    // H0 = [h_{i+j+1}], H1 = [h_{i+j+2}] with h_k the k-th impulse block
    let mut h0 = DMatrix::zeros(rows_blk * p, cols_blk * m);
    let mut h1 = DMatrix::zeros(rows_blk * p, cols_blk * m);
    for i in 0..rows_blk {
        for j in 0..cols_blk {
            h0.view_mut((i * p, j * m), (p, m)).copy_from(&fir[i + j + 1]);
            if i + j + 2 < fir.len() {
                h1.view_mut((i * p, j * m), (p, m)).copy_from(&fir[i + j + 2]);
            }
        }
    }
    let svd = nalgebra::SVD::new(h0, true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("Hankel SVD failed".into()))?;
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("Hankel SVD failed".into()))?;
    let sv = &svd.singular_values;
    if sv.len() < n || sv[n - 1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient(format!(
            "Hankel matrix rank below requested order {n}"
        )));
    }
    let s_half_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        (0..n).map(|i| sv[i].sqrt().recip()),
    ));
    let s_half = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| sv[i].sqrt())));
    let u_n = u.columns(0, n).into_owned();
    let v_n = vt.rows(0, n).transpose().into_owned();
    let ad = &s_half_inv * u_n.transpose() * h1 * &v_n * &s_half_inv;
    let bd = (&s_half * v_n.transpose()).columns(0, m).into_owned();
    let cd = (u_n * s_half).rows(0, p).into_owned();
    let dd = fir[0].clone();
    Ok((ad, bd, cd, dd))
}

/// Least-squares FIR fit `y_k = Σ_{i=0}^{lag} h_i u_{k-i}` giving the
/// discrete impulse-response blocks `h_i` (p x m each).
fn estimate_fir(data: &Dataset, lag: usize) -> Result<Vec<DMatrix<f64>>> {
    let (m, p) = (data.input_dim(), data.output_dim());
    let taps = lag + 1;
    let cols = taps * m;
    let mut rows = 0usize;
    for tr in data.trajectories() {
        rows += tr.len().saturating_sub(lag);
    }
    if rows < cols {
        return Err(Error::InsufficientData(format!(
            "FIR regression needs more than {cols} usable rows, got {rows}"
        )));
    }
    let mut x = DMatrix::zeros(rows, cols);
    let mut yb = DMatrix::zeros(rows, p);
    let mut r = 0usize;
    for tr in data.trajectories() {
        for k in lag..tr.len() {
            for i in 0..taps {
                for c in 0..m {
                    x[(r, i * m + c)] = tr.u[(k - i, c)];
                }
            }
            for c in 0..p {
                yb[(r, c)] = tr.y[(k, c)];
            }
            r += 1;
        }
    }
    let svd = nalgebra::SVD::new(x, true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::RankDeficient(
            "FIR regressors are rank deficient; use richer excitation".into(),
        ));
    }
    let mut taps_mat = DMatrix::zeros(cols, p);
    for c in 0..p {
        let sol = svd
            .solve(&yb.column(c).into_owned(), 1e-12)
            .map_err(|e| Error::Numerical(format!("FIR least squares: {e}")))?;
        taps_mat.column_mut(c).copy_from(&sol);
    }
    let mut fir = Vec::with_capacity(taps);
    for i in 0..taps {
        let mut h = DMatrix::zeros(p, m);
        for c in 0..m {
            for o in 0..p {
                h[(o, c)] = taps_mat[(i * m + c, o)];
            }
        }
        fir.push(h);
    }
    Ok(fir)
}

/// Which signal norm the Lipschitz estimator uses for `‖y₁−y₂‖/‖u₁−u₂‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMetric {
    /// Discrete l2 norm of the stacked sample vector (default).
    StackedL2,
    /// Supremum over samples of the per-sample vector norm.
    PointwiseSup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub l_g: f64,
    /// Number of trajectory pairs that entered the maximum.
    pub pairs_used: usize,
}

/// Pairwise output-sensitivity bound: the maximum over unordered
/// trajectory pairs of `‖y_i−y_j‖ / ‖u_i−u_j‖`. Pairs with nearly equal
/// inputs (denominator ≤ 1e-9) or unequal lengths are skipped.
pub fn estimate_lipschitz(data: &Dataset) -> Result<LipschitzEstimate> {
    estimate_lipschitz_with(data, SignalMetric::StackedL2)
}

pub fn estimate_lipschitz_with(data: &Dataset, metric: SignalMetric) -> Result<LipschitzEstimate> {
    let trajs = data.trajectories();
    if trajs.len() < 2 {
        return Err(Error::InsufficientData(
            "Lipschitz estimation needs at least two trajectories".into(),
        ));
    }
    let norm = |m: &DMatrix<f64>| -> f64 {
        match metric {
            SignalMetric::StackedL2 => m.norm(),
            SignalMetric::PointwiseSup => (0..m.nrows())
                .map(|k| m.row(k).norm())
                .fold(0.0, f64::max),
        }
    };
    let mut best = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..trajs.len() {
        for j in (i + 1)..trajs.len() {
            let (ti, tj) = (&trajs[i], &trajs[j]);
            if ti.len() != tj.len() {
                continue;
            }
            let du = norm(&(&ti.u - &tj.u));
            if du <= 1e-9 {
                continue;
            }
            let dy = norm(&(&ti.y - &tj.y));
            best = best.max(dy / du);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::InsufficientData(
            "no usable trajectory pairs (all inputs degenerate or lengths differ)".into(),
        ));
    }
    Ok(LipschitzEstimate {
        l_g: best,
        pairs_used: pairs,
    })
}
