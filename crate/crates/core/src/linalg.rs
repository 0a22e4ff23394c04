//! Small dense linear algebra: power iteration and least squares.

use crate::empirical::Direction;
use crate::error::{Error, Result};
use crate::rng::{random_unit_vector, RngSeed};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Fixed start-vector seed so repeated calls are reproducible.
const START_SEED: RngSeed = RngSeed(0x5EED_E16E_u64);

/// Largest (algebraic) eigenvalue of a symmetric matrix and a unit eigenvector,
/// by shifted power iteration. Stops when |Mv - lambda v| <= tol * max(|lambda|, 1).
pub fn top_eigenpair(m: &DMatrix<f64>, tol: f64) -> Result<(f64, Direction)> {
    top_eigenpair_with(m, tol, DEFAULT_MAX_ITER, START_SEED)
}

pub fn top_eigenpair_with(
    m: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
    seed: RngSeed,
) -> Result<(f64, Direction)> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    if m.iter().all(|x| *x == 0.0) {
        return Ok((0.0, Direction::axis(d, 0)));
    }
    // Gershgorin lower bound on the spectrum; shifting by it makes M + sI
    // positive semidefinite so the dominant eigenvalue is the largest one.
    let lower = (0..d)
        .map(|i| {
            m[(i, i)]
                - (0..d)
                    .filter(|&j| j != i)
                    .map(|j| m[(i, j)].abs())
                    .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    let shift = (-lower).max(0.0);
    let mut rng = seed.rng();
    let mut v = DVector::from_vec(random_unit_vector(&mut rng, d));
    for _ in 0..max_iter {
        let mv = m * &v;
        let lambda = v.dot(&mv);
        let resid = (&mv - lambda * &v).norm();
        if resid <= tol * lambda.abs().max(1.0) {
            return Ok((lambda, Direction::new(v.as_slice().to_vec())?));
        }
        let w = mv + shift * &v;
        let n = w.norm();
        if n == 0.0 {
            break;
        }
        v = w / n;
    }
    Err(Error::NoConvergence(max_iter))
}

/// Top-`k` eigenpairs by power iteration with Hotelling deflation.
pub fn top_eigenpairs(m: &DMatrix<f64>, k: usize, tol: f64) -> Result<Vec<(f64, Direction)>> {
    let d = m.nrows();
    let mut work = m.clone();
    let mut out = Vec::with_capacity(k.min(d));
    // Deflated components are pushed far below the remaining spectrum.
    let offset = 2.0
        * (0..d)
            .map(|i| (0..d).map(|j| m[(i, j)].abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
        + 1.0;
    for i in 0..k.min(d) {
        let (lam, dir) =
            top_eigenpair_with(&work, tol, DEFAULT_MAX_ITER, START_SEED.derive(i as u64))?;
        let v = DVector::from_column_slice(dir.as_slice());
        work -= (lam + offset) * &v * v.transpose();
        out.push((lam, dir));
    }
    Ok(out)
}

/// Spectral norm of a symmetric matrix: max(|lambda_max|, |lambda_min|).
pub fn spectral_norm_sym(m: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let (hi, _) = top_eigenpair(m, tol)?;
    let neg = -m;
    let (lo, _) = top_eigenpair(&neg, tol)?;
    Ok(hi.abs().max(lo.abs()))
}

/// Minimum-norm solution of the symmetric PSD system `a x = b`; eigen-directions
/// with eigenvalue below `rel_tol * lambda_max` get zero coefficient.
pub fn solve_psd_min_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rel_tol: f64,
) -> Result<DVector<f64>> {
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Singular("non-finite normal equations".into()));
    }
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut x = DVector::zeros(a.nrows());
    if lmax == 0.0 {
        return Ok(x);
    }
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > rel_tol * lmax {
            let u = eig.eigenvectors.column(i);
            x += u * (u.dot(b) / lam);
        }
    }
    Ok(x)
}
