use nalgebra::{DMatrix, DVector};

use super::SolverReport;
use crate::error::{invalid, Result};

/// `(1/n) ||y - X w||^2 + lambda ||w||_1`.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub w: DVector<f64>,
    pub report: SolverReport,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Objective in Gram form: `yty - 2 c^T w + w^T G w + lambda ||w||_1`, where
/// `G = X^T X / n`, `c = X^T y / n` and `yty = y^T y / n`.
pub fn lasso_objective(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    yty: f64,
    lambda: f64,
    w: &DVector<f64>,
) -> f64 {
    let gw = gram * w;
    yty - 2.0 * xty.dot(w) + w.dot(&gw) + lambda * w.lp_norm(1)
}

fn kkt(gw: &DVector<f64>, xty: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..w.len() {
        let grad = 2.0 * (gw[j] - xty[j]);
        let v = if w[j] == 0.0 {
            (grad.abs() - lambda).max(0.0)
        } else {
            (grad + lambda * w[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Cyclic coordinate descent on the Gram form of the Lasso objective.
///
/// `warm` seeds the iterate; otherwise it starts at zero. Iteration stops when
/// the KKT violation after a sweep is at most `tol`.
pub fn lasso_gram(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    yty: f64,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<&DVector<f64>>,
) -> Result<LassoFit> {
    let p = gram.nrows();
    if gram.ncols() != p || xty.len() != p {
        return invalid("Gram matrix and cross term dimensions disagree");
    }
    if !(lambda >= 0.0) || !(tol > 0.0) {
        return invalid("need lambda >= 0 and tol > 0");
    }
    let mut w = match warm {
        Some(w0) if w0.len() == p => w0.clone(),
        Some(_) => return invalid("warm start has the wrong length"),
        None => DVector::zeros(p),
    };
    let mut gw = gram * &w;
    let objective_at = |w: &DVector<f64>, gw: &DVector<f64>| {
        yty - 2.0 * xty.dot(w) + w.dot(gw) + lambda * w.lp_norm(1)
    };
    let mut objective = vec![objective_at(&w, &gw)];
    let mut violation = kkt(&gw, xty, &w, lambda);
    let mut iterations = 0;
    while violation > tol && iterations < max_iter {
        for j in 0..p {
            let gjj = gram[(j, j)];
            let old = w[j];
            let new = if gjj > 0.0 {
                let b = xty[j] - gw[j] + gjj * old;
                soft_threshold(b, lambda / 2.0) / gjj
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                gw.axpy(delta, &gram.column(j), 1.0);
                w[j] = new;
            }
        }
        iterations += 1;
        // Refresh to keep round-off from accumulating over long runs.
        if iterations % 64 == 0 {
            gw = gram * &w;
        }
        objective.push(objective_at(&w, &gw));
        violation = kkt(&gw, xty, &w, lambda);
    }
    Ok(LassoFit {
        w,
        report: SolverReport {
            iterations,
            kkt_violation: violation,
            converged: violation <= tol,
            objective,
        },
    })
}

pub fn lasso(problem: &RegressionProblem, tol: f64, max_iter: usize) -> Result<LassoFit> {
    let n = problem.design.nrows();
    if n == 0 || problem.response.len() != n {
        return invalid("design and response sizes disagree");
    }
    let inv_n = 1.0 / n as f64;
    let gram = problem.design.tr_mul(&problem.design) * inv_n;
    let xty = problem.design.tr_mul(&problem.response) * inv_n;
    let yty = problem.response.norm_squared() * inv_n;
    lasso_gram(&gram, &xty, yty, problem.lambda, tol, max_iter, None)
}
