use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::error::{invalid, Result};

const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub w: DVector<f64>,
    /// Set when `lambda3 = 0` and the design was rank deficient, so `w` is the
    /// minimum-norm least-squares solution.
    pub min_norm: bool,
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Pinv(DMatrix<f64>),
}

/// Factorizes `G + lambda3 I` once for repeated solves against new right-hand sides.
pub struct RidgeSolver {
    factor: Factor,
}

impl RidgeSolver {
    /// `gram = X^T X / N`. The minimizer of `(1/N)||y - X w||^2 + lambda3 ||w||^2`
    /// solves `(gram + lambda3 I) w = X^T y / N`.
    pub fn new(gram: &DMatrix<f64>, lambda3: f64) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return invalid("Gram matrix must be square");
        }
        if !(lambda3 >= 0.0) {
            return invalid("lambda3 must be nonnegative");
        }
        let p = gram.nrows();
        let system = gram + DMatrix::identity(p, p) * lambda3;
        let scale = system.diagonal().iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        if lambda3 > 0.0 || crate::linalg::min_eigenvalue(&system) > RANK_TOL * scale {
            if let Some(c) = system.clone().cholesky() {
                return Ok(Self {
                    factor: Factor::Cholesky(c),
                });
            }
        }
        let svd = SVD::new(system, true, true);
        let pinv = svd
            .pseudo_inverse(RANK_TOL * scale)
            .map_err(|e| crate::error::Error::Numerical(e.to_string()))?;
        Ok(Self {
            factor: Factor::Pinv(pinv),
        })
    }

    pub fn min_norm(&self) -> bool {
        matches!(self.factor, Factor::Pinv(_))
    }

    pub fn solve(&self, xty: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Cholesky(c) => c.solve(xty),
            Factor::Pinv(p) => p * xty,
        }
    }
}

pub fn ridge(design: &DMatrix<f64>, response: &DVector<f64>, lambda3: f64) -> Result<RidgeFit> {
    let n = design.nrows();
    if n == 0 || response.len() != n {
        return invalid("design and response sizes disagree");
    }
    let inv_n = 1.0 / n as f64;
    let solver = RidgeSolver::new(&(design.tr_mul(design) * inv_n), lambda3)?;
    Ok(RidgeFit {
        w: solver.solve(&(design.tr_mul(response) * inv_n)),
        min_norm: solver.min_norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{lasso, RegressionProblem};
    use rand::Rng;

    #[test]
    fn closed_form_one_dimensional() {
        let fit = ridge(&DMatrix::from_element(4, 1, 1.0), &DVector::from_element(4, 1.0), 1.0).unwrap();
        assert!((fit.w[0] - 0.5).abs() < 1e-15);
        assert!(!fit.min_norm);
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let mut rng = crate::rng::stream_rng(1, 0);
        let x = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        assert!(ridge(&x, &y, 1e9).unwrap().w.norm() <= 1e-6);
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let fit = ridge(&x, &y, 0.0).unwrap();
        assert!(fit.min_norm);
        assert!((fit.w[0] - 1.0).abs() < 1e-10 && (fit.w[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ordinary_least_squares_matches_unpenalized_lasso() {
        for seed in 0..20 {
            let mut rng = crate::rng::stream_rng(seed, 0);
            let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
            let r = ridge(&x, &y, 0.0).unwrap();
            let l = lasso(
                &RegressionProblem {
                    design: x,
                    response: y,
                    lambda: 0.0,
                },
                1e-13,
                1_000_000,
            )
            .unwrap();
            assert!((r.w - l.w).amax() < 1e-8);
        }
    }
}
