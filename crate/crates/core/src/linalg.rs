//! Small dense linear-algebra helpers shared by the engines and the filter.
//!
//! Every factorization goes through the same jitter policy: try the matrix as
//! given, then add `1e-12 * trace / d` to the diagonal and escalate by a factor
//! of ten, at most three times.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used for the symmetry and PSD checks on covariances.
pub const COV_TOLERANCE: f64 = 1e-10;

const JITTER_BASE: f64 = 1e-12;
const JITTER_ESCALATIONS: u32 = 3;

fn jitter_schedule(m: &DMatrix<f64>) -> impl Iterator<Item = f64> {
    let d = m.nrows().max(1) as f64;
    let scale = m.trace() / d;
    // A zero-trace matrix has no scale to jitter against.
    let escalations = if scale > 0.0 {
        JITTER_ESCALATIONS + 1
    } else {
        0
    };
    std::iter::once(0.0)
        .chain((0..escalations).map(move |k| JITTER_BASE * scale * 10f64.powi(k as i32)))
}

fn with_jitter(m: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    if jitter > 0.0 {
        for i in 0..out.nrows() {
            out[(i, i)] += jitter;
        }
    }
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute asymmetry relative to the largest absolute entry.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Checks symmetry and positive semidefiniteness within [`COV_TOLERANCE`].
pub fn check_covariance(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "covariance columns",
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: f64::NAN,
        });
    }
    let asymmetry = relative_asymmetry(m);
    if asymmetry > COV_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -COV_TOLERANCE * max.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Symmetric square root `S` with `S * S = m` (so also `S * S^T = m`).
///
/// Eigenvalues that are negative within tolerance are clamped to zero; larger
/// negative eigenvalues trigger the jitter schedule and finally an error.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let mut min_seen = f64::NAN;
    for jitter in jitter_schedule(&sym) {
        let eig = SymmetricEigen::new(with_jitter(&sym, jitter));
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        min_seen = min;
        if !min.is_finite() {
            break;
        }
        if min >= -COV_TOLERANCE * max.max(f64::MIN_POSITIVE) {
            let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            let q = &eig.eigenvectors;
            let mut root = q * DMatrix::from_diagonal(&roots) * q.transpose();
            symmetrize(&mut root);
            return Ok(root);
        }
    }
    Err(Error::NotPositiveSemidefinite {
        min_eigenvalue: min_seen,
    })
}

/// Symmetrizes and projects onto the PSD cone when the matrix is indefinite.
pub fn finalize_covariance(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    if m.clone().cholesky().is_some() {
        return m;
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return m;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    symmetrize(&mut out);
    out
}

/// Solves `a * x = b` for symmetric positive (semi)definite `a`.
///
/// The system is Jacobi-equilibrated first so that badly scaled moment
/// matrices (e.g. raw monomial Gram matrices) factor reliably. Returns `None`
/// once the jitter budget is exhausted.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 || a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let scale = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let d = a[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }),
    );
    let mut scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    symmetrize(&mut scaled);
    let rhs = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * scale[i]);
    for jitter in jitter_schedule(&scaled) {
        if let Some(chol) = with_jitter(&scaled, jitter).cholesky() {
            let mut x = chol.solve(&rhs);
            for i in 0..n {
                for j in 0..x.ncols() {
                    x[(i, j)] *= scale[i];
                }
            }
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
    }
    None
}
