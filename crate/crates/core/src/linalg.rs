//! Dense matrix utilities shared across the crate: spectral norms, symmetric
//! eigen extremes, the principal matrix logarithm, zero-order-hold
//! (un)discretization and Gramian balancing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Returns `(M + Mᵀ)/2`.
pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Largest singular value, computed from the symmetric eigendecomposition of
/// the smaller Gram matrix. Deterministic.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if !all_finite(m) {
        return Err(Error::NonFinite("spectral_norm input".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let eigs = nalgebra::SymmetricEigen::new(symmetrized(&gram)).eigenvalues;
    let lam = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(lam.max(0.0).sqrt())
}

/// Largest eigenvalue of a symmetric matrix (input symmetrized first).
pub fn max_eig_sym(m: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(symmetrized(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix (input symmetrized first).
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(symmetrized(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Principal square root via the Denman-Beavers iteration. Requires the
/// spectrum to avoid the closed negative real axis.
fn sqrtm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = identity(n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::MatrixLog("singular iterate in square root".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::MatrixLog("singular iterate in square root".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm().max(1.0) {
            break;
        }
    }
    Ok(y)
}

// 8-point Gauss-Legendre nodes/weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Principal matrix logarithm by inverse scaling-and-squaring: repeated
/// square roots bring the matrix near the identity, then `log(I+X)` is
/// evaluated with Gauss-Legendre quadrature of the integral
/// `∫₀¹ X (I + sX)⁻¹ ds`.
///
/// Errors if the spectrum touches the closed negative real axis, where the
/// principal logarithm does not exist.
pub fn matrix_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension("matrix_log needs a square matrix".into()));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite("matrix_log input".into()));
    }
    let scale = m.norm().max(1.0);
    for lam in m.complex_eigenvalues().iter() {
        if lam.norm() <= 1e-14 * scale {
            return Err(Error::MatrixLog(format!("eigenvalue {lam} at the origin")));
        }
        if lam.re < 0.0 && lam.im.abs() <= 1e-12 * lam.norm().max(1.0) {
            return Err(Error::MatrixLog(format!(
                "eigenvalue {lam} on the negative real axis"
            )));
        }
    }

    let mut a = m.clone();
    let mut squarings = 0u32;
    while (&a - identity(n)).norm() > 0.25 {
        if squarings >= 64 {
            return Err(Error::MatrixLog("square-root scaling did not converge".into()));
        }
        a = sqrtm(&a)?;
        squarings += 1;
    }

    let x = &a - identity(n);
    let mut log_a = DMatrix::zeros(n, n);
    for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        let s = 0.5 * (node + 1.0);
        let w = 0.5 * weight;
        let denom = identity(n) + &x * s;
        let inv = denom
            .try_inverse()
            .ok_or_else(|| Error::MatrixLog("singular quadrature denominator".into()))?;
        log_a += (&x * inv) * w;
    }
    Ok(log_a * 2f64.powi(squarings as i32))
}

/// Exact zero-order-hold discretization of `(A, B)` at step `dt`, via the
/// exponential of the augmented block `[[A, B], [0, 0]]·dt`.
pub fn zoh_discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Inverse of [`zoh_discretize`]: recovers continuous-time `(A, B)` from the
/// discrete pair through the principal logarithm of `[[Ad, Bd], [0, I]]`.
pub fn zoh_undiscretize(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ad.nrows();
    let m = bd.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(ad);
    aug.view_mut((0, n), (n, m)).copy_from(bd);
    aug.view_mut((n, n), (m, m)).copy_from(&identity(m));
    let log = matrix_log(&aug)?;
    Ok((
        log.view((0, 0), (n, n)).into_owned() / dt,
        log.view((0, n), (n, m)).into_owned() / dt,
    ))
}

/// Solves the continuous Lyapunov equation `AᵀX + XA + W = 0` by the dense
/// Kronecker formulation. Intended for the small systems this crate handles.
pub fn lyapunov_solve(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut k = DMatrix::zeros(n * n, n * n);
    // vec(AᵀX + XA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X), column-major vec
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                // (I ⊗ Aᵀ): block (j,j) is Aᵀ
                k[(j * n + i, j * n + l)] += a[(l, i)];
                // (Aᵀ ⊗ I): entry couples column blocks
                k[(j * n + i, l * n + i)] += a[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, w.iter().map(|x| -x));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let mut x = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            x[(i, j)] = sol[j * n + i];
        }
    }
    Ok(symmetrized(&x))
}

/// Gramian-balancing similarity transform. Returns `(A, B, C)` in balanced
/// coordinates, or the inputs unchanged when `A` is not Hurwitz or the
/// Gramians are numerically rank deficient.
pub fn balance_realization(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let hurwitz = a.complex_eigenvalues().iter().all(|l| l.re < 0.0);
    if !hurwitz {
        return (a.clone(), b.clone(), c.clone());
    }
    let fallback = || (a.clone(), b.clone(), c.clone());
    let wc = match lyapunov_solve(&a.transpose(), &(b * b.transpose())) {
        Ok(x) => x,
        Err(_) => return fallback(),
    };
    let wo = match lyapunov_solve(a, &(c.transpose() * c)) {
        Ok(x) => x,
        Err(_) => return fallback(),
    };
    let chol = match nalgebra::Cholesky::new(wc) {
        Some(ch) => ch,
        None => return fallback(),
    };
    let r = chol.l();
    let svd = nalgebra::SVD::new(&r.transpose() * wo * &r, true, false);
    let u = match svd.u {
        Some(u) => u,
        None => return fallback(),
    };
    if svd.singular_values.iter().any(|&s| s <= 1e-14) {
        return fallback();
    }
    let s_quarter = DMatrix::from_diagonal(&svd.singular_values.map(|s| s.powf(-0.25)));
    let t = r * u * s_quarter;
    let t_inv = match t.clone().try_inverse() {
        Some(ti) => ti,
        None => return fallback(),
    };
    let (ab, bb, cb) = (&t_inv * a * &t, t_inv * b, c * t);
    // per-state sign normalization (also a balanced transform): make the
    // first output row nonpositive so a positive all-ones output
    // perturbation starts out norm-reducing
    let n = ab.nrows();
    let signs: Vec<f64> = (0..n)
        .map(|j| if cb[(0, j)] > 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut a_s = ab.clone();
    let mut b_s = bb.clone();
    let mut c_s = cb.clone();
    for i in 0..n {
        for j in 0..n {
            a_s[(i, j)] = ab[(i, j)] * signs[i] * signs[j];
        }
        for k in 0..b_s.ncols() {
            b_s[(i, k)] = bb[(i, k)] * signs[i];
        }
        for k in 0..c_s.nrows() {
            c_s[(k, i)] = cb[(k, i)] * signs[i];
        }
    }
    (a_s, b_s, c_s)
}
