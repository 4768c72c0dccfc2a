//! Small dense linear-algebra helpers shared by the model engines.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix2, SymmetricEigen};

use crate::error::{PbcError, Result};

pub(crate) fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| PbcError::Conditioning(format!("{what} is not positive definite")))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Covariance `L Lᵀ` from log-Cholesky parameters `[ln L₁₁, L₂₁, ln L₂₂]`.
pub fn log_cholesky_to_cov(p: &[f64]) -> Matrix2<f64> {
    let l = log_cholesky_factor(p);
    l * l.transpose()
}

pub fn log_cholesky_factor(p: &[f64]) -> Matrix2<f64> {
    Matrix2::new(p[0].exp(), 0.0, p[1], p[2].exp())
}

/// Inverse of [`log_cholesky_to_cov`]; diagonal entries are floored so a
/// singular input still maps to finite parameters.
pub fn cov_to_log_cholesky(d: &Matrix2<f64>) -> [f64; 3] {
    let l11 = d[(0, 0)].max(1e-12).sqrt();
    let l21 = d[(1, 0)] / l11;
    let l22 = (d[(1, 1)] - l21 * l21).max(1e-12).sqrt();
    [l11.ln(), l21, l22.ln()]
}

pub fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let e = SymmetricEigen::new(*m);
    e.eigenvalues.min()
}

pub fn to_dmatrix2(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

/// Checks the cross-product matrix `XᵀX` for exact collinearity, returning the
/// names of columns that are linear combinations of earlier columns.
pub(crate) fn dependent_columns(xtx: &DMatrix<f64>, names: &[&str]) -> Vec<String> {
    let p = xtx.nrows();
    // Unit-diagonal scaling so the pivot threshold is scale free.
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let d = xtx[(j, j)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut a = DMatrix::from_fn(p, p, |i, j| xtx[(i, j)] * scale[i] * scale[j]);
    let mut dependent = Vec::new();
    // Column-ordered Cholesky that skips pivots that vanish.
    for k in 0..p {
        let pivot = a[(k, k)];
        if scale[k] == 0.0 || pivot <= 1e-10 {
            dependent.push(names.get(k).map(|s| s.to_string()).unwrap_or_else(|| format!("col{k}")));
            continue;
        }
        let root = pivot.sqrt();
        for i in k..p {
            a[(i, k)] /= root;
        }
        for j in (k + 1)..p {
            for i in j..p {
                let v = a[(i, k)] * a[(j, k)];
                a[(i, j)] -= v;
            }
        }
    }
    dependent
}
