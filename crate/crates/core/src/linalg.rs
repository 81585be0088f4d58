//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const CONDITION_LIMIT: f64 = 1e12;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue and a unit eigenvector for it.
pub fn min_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let (i, v) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    (v, eig.eigenvectors.column(i).into_owned())
}

/// Solves `A x = b` for symmetric positive definite `A`, refusing when the
/// condition number exceeds [`CONDITION_LIMIT`].
///
/// `labels[i]` names row `i` of `A` in the error, so callers can report which
/// original features span the deficient directions.
pub fn guarded_spd_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    labels: &[usize],
) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        let mut features = Vec::new();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda * CONDITION_LIMIT > max {
                continue;
            }
            for (i, v) in eig.eigenvectors.column(k).iter().enumerate() {
                if v.abs() > 1e-6 && !features.contains(&labels[i]) {
                    features.push(labels[i]);
                }
            }
        }
        features.sort_unstable();
        return Err(Error::SingularCovariance {
            condition,
            features,
        });
    }
    a.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))
}
