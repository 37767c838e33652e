//! Small complex dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// `tr(A·B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for r in 0..a.nrows() {
        for c in r..a.ncols() {
            worst = worst.max((a[(r, c)] - a[(c, r)].conj()).norm());
        }
    }
    worst
}

pub fn real_trace(a: &CMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Returns `F` with `F·F^H = A` for a Hermitian PSD `A`.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero, anything below `-tol`
/// is rejected. `tol` is `rel_tol * max(trace, 0)`.
pub fn psd_factor(a: &CMatrix, rel_tol: f64) -> Result<CMatrix> {
    let m = a.nrows();
    if m == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let threshold = rel_tol * real_trace(a).max(0.0);
    let eig = SymmetricEigen::new(a.clone());
    let mut factor = eig.eigenvectors;
    for (col, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -threshold {
            return Err(Error::NotPsd {
                min_eigenvalue: lambda,
                threshold: -threshold,
            });
        }
        let scale = Complex64::new(lambda.max(0.0).sqrt(), 0.0);
        for z in factor.column_mut(col).iter_mut() {
            *z *= scale;
        }
    }
    Ok(factor)
}

/// Hermitian positive-definite factorization, with a cheap condition
/// estimate from the Cholesky diagonal for error reporting.
pub struct HpdSolver {
    chol: Cholesky<Complex64, nalgebra::Dyn>,
}

impl HpdSolver {
    pub fn new(q: &CMatrix) -> Result<Self> {
        match Cholesky::new(q.clone()) {
            Some(chol) => {
                let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|z| z.re).collect();
                let max = diag.iter().copied().fold(0.0_f64, f64::max);
                let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
                let condition = (max / min).powi(2);
                if !condition.is_finite() || condition > 1e14 {
                    return Err(Error::Singular { condition });
                }
                Ok(Self { chol })
            }
            None => Err(Error::Singular {
                condition: f64::INFINITY,
            }),
        }
    }

    /// Solves `Q·X = B`.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        self.chol.solve(b)
    }
}
