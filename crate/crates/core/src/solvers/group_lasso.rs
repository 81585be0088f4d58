use nalgebra::DMatrix;

use super::SolverReport;
use crate::error::{invalid, Result};

/// Rows with norm at most this fraction of the largest row norm are not selected.
pub const SELECTION_THRESHOLD: f64 = 1e-9;

/// `(1/(N d)) sum_n ||Y_n - X_n K||^2 + lambda2 sum_j ||K_j||_2` with `d = Y.ncols()`.
#[derive(Debug, Clone)]
pub struct GroupLassoProblem {
    pub design: DMatrix<f64>,
    pub response: DMatrix<f64>,
    pub lambda2: f64,
}

#[derive(Debug, Clone)]
pub struct GroupLassoFit {
    pub k: DMatrix<f64>,
    /// Indices of the nonzero rows of `k`, ascending.
    pub selected: Vec<usize>,
    pub report: SolverReport,
}

/// Indices of rows whose norm exceeds [`SELECTION_THRESHOLD`] times the largest.
pub fn select_rows(k: &DMatrix<f64>) -> Vec<usize> {
    let norms: Vec<f64> = (0..k.nrows()).map(|j| k.row(j).norm()).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (0..k.nrows())
        .filter(|&j| norms[j] > SELECTION_THRESHOLD * max)
        .collect()
}

fn objective(
    gk: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    yty: f64,
    lambda2: f64,
    k: &DMatrix<f64>,
) -> f64 {
    let q = k.ncols() as f64;
    let smooth = yty - 2.0 * k.dot(cross) + k.dot(gk);
    smooth / q + lambda2 * (0..k.nrows()).map(|j| k.row(j).norm()).sum::<f64>()
}

fn kkt(gk: &DMatrix<f64>, cross: &DMatrix<f64>, k: &DMatrix<f64>, lambda2: f64) -> f64 {
    let q = k.ncols() as f64;
    let mut worst = 0.0f64;
    for j in 0..k.nrows() {
        let grad = (gk.row(j) - cross.row(j)) * (2.0 / q);
        let norm = k.row(j).norm();
        let v = if norm == 0.0 {
            (grad.norm() - lambda2).max(0.0)
        } else {
            (grad + k.row(j) * (lambda2 / norm)).norm()
        };
        worst = worst.max(v);
    }
    worst
}

/// Block coordinate descent over the rows of `K` in Gram form.
///
/// `gram = X^T X / N` (`p x p`), `cross = X^T Y / N` (`p x q`), and
/// `yty = ||Y||_F^2 / N`. The smooth part is divided by `q`, the number of
/// response columns.
pub fn group_lasso_gram(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    yty: f64,
    lambda2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GroupLassoFit> {
    let p = gram.nrows();
    if gram.ncols() != p || cross.nrows() != p || cross.ncols() == 0 {
        return invalid("Gram and cross matrices disagree");
    }
    if !(lambda2 >= 0.0) || !(tol > 0.0) {
        return invalid("need lambda2 >= 0 and tol > 0");
    }
    let q = cross.ncols();
    let mut k = DMatrix::zeros(p, q);
    let mut gk = DMatrix::zeros(p, q);
    let mut trace = vec![objective(&gk, cross, yty, lambda2, &k)];
    let mut violation = kkt(&gk, cross, &k, lambda2);
    let mut iterations = 0;
    let shrink = lambda2 * q as f64 / 2.0;
    while violation > tol && iterations < max_iter {
        for j in 0..p {
            let gjj = gram[(j, j)];
            let old = k.row(j).into_owned();
            let new = if gjj > 0.0 {
                let b = cross.row(j) - gk.row(j) + &old * gjj;
                let nb = b.norm();
                if nb > shrink {
                    b * ((1.0 - shrink / nb) / gjj)
                } else {
                    old.clone() * 0.0
                }
            } else {
                old.clone() * 0.0
            };
            let delta = &new - &old;
            if delta.iter().any(|v| *v != 0.0) {
                gk.ger(1.0, &gram.column(j), &delta.transpose(), 1.0);
                k.set_row(j, &new);
            }
        }
        iterations += 1;
        if iterations % 64 == 0 {
            gk = gram * &k;
        }
        trace.push(objective(&gk, cross, yty, lambda2, &k));
        violation = kkt(&gk, cross, &k, lambda2);
    }
    let selected = select_rows(&k);
    Ok(GroupLassoFit {
        k,
        selected,
        report: SolverReport {
            iterations,
            kkt_violation: violation,
            converged: violation <= tol,
            objective: trace,
        },
    })
}

pub fn group_lasso_embedding(
    problem: &GroupLassoProblem,
    tol: f64,
    max_iter: usize,
) -> Result<GroupLassoFit> {
    let n = problem.design.nrows();
    if n == 0 || problem.response.nrows() != n {
        return invalid("design and response row counts disagree");
    }
    let inv_n = 1.0 / n as f64;
    let gram = problem.design.tr_mul(&problem.design) * inv_n;
    let cross = problem.design.tr_mul(&problem.response) * inv_n;
    let yty = problem.response.norm_squared() * inv_n;
    group_lasso_gram(&gram, &cross, yty, problem.lambda2, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, p: usize, q: usize, lambda2: f64) -> GroupLassoProblem {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let design = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let mut truth = DMatrix::zeros(p, q);
        for c in 0..q {
            truth[(0, c)] = rng.random_range(-1.0..1.0);
        }
        let noise = DMatrix::from_fn(n, q, |_, _| 0.1 * rng.random_range(-1.0..1.0));
        GroupLassoProblem {
            response: &design * truth + noise,
            design,
            lambda2,
        }
    }

    #[test]
    fn zero_response_gives_zero() {
        let mut p = random_problem(1, 20, 4, 3, 0.01);
        p.response.fill(0.0);
        let fit = group_lasso_embedding(&p, 1e-10, 1000).unwrap();
        assert!(fit.k.iter().all(|v| *v == 0.0));
        assert!(fit.selected.is_empty());
    }

    #[test]
    fn large_lambda_gives_zero() {
        let mut p = random_problem(2, 20, 4, 3, 0.0);
        let n = p.design.nrows() as f64;
        let q = p.response.ncols() as f64;
        let grad0 = p.design.tr_mul(&p.response) * (2.0 / (n * q));
        p.lambda2 = (0..4).map(|j| grad0.row(j).norm()).fold(0.0, f64::max) * 1.001;
        let fit = group_lasso_embedding(&p, 1e-10, 1000).unwrap();
        assert!(fit.selected.is_empty());
        assert_eq!(fit.report.iterations, 0);
    }

    #[test]
    fn kkt_and_monotone_objective() {
        for seed in 0..20 {
            let p = random_problem(seed, 30, 5, 4, 0.02);
            let fit = group_lasso_embedding(&p, 1e-10, 100_000).unwrap();
            assert!(fit.report.converged, "seed {seed}: {:?}", fit.report.kkt_violation);
            for w in fit.report.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert!(fit.selected.contains(&0));
        }
    }

    #[test]
    fn matches_per_row_subgradient_condition() {
        // Independent check of stationarity from the raw (design, response) data.
        let p = random_problem(7, 40, 4, 3, 0.05);
        let fit = group_lasso_embedding(&p, 1e-12, 100_000).unwrap();
        let (n, q) = (p.design.nrows() as f64, p.response.ncols() as f64);
        let resid = &p.design * &fit.k - &p.response;
        let grad = p.design.tr_mul(&resid) * (2.0 / (n * q));
        for j in 0..4 {
            let norm = fit.k.row(j).norm();
            if norm == 0.0 {
                assert!(grad.row(j).norm() <= p.lambda2 + 1e-9);
            } else {
                let g = grad.row(j) + fit.k.row(j) * (p.lambda2 / norm);
                assert!(g.norm() < 1e-9);
            }
        }
    }
}
