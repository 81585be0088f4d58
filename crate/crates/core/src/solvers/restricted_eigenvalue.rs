use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{min_eigenpair, min_eigenvalue};
use crate::rng::{stream_rng, SOLVER_STREAM};

/// Cone constant: `||beta_{S^c}||_1 <= CONE * ||beta_S||_1`.
const CONE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictedEigenvalueOptions {
    /// Random restarts per support, in addition to the eigenvector warm start.
    pub restarts: usize,
    /// Projected-gradient steps per start.
    pub steps: usize,
    /// Enumerate every support when there are at most this many; sample this many otherwise.
    pub max_supports: usize,
    pub seed: u64,
}

impl Default for RestrictedEigenvalueOptions {
    fn default() -> Self {
        Self {
            restarts: 64,
            steps: 500,
            max_supports: 100_000,
            seed: 0,
        }
    }
}

/// A bracket `lower <= C_min(Z, s) <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedEigenvalue {
    /// `lambda_min(Z)`.
    pub lower: f64,
    /// Smallest cone Rayleigh quotient found.
    pub upper: f64,
    /// Whether every support of size `s` was searched.
    pub exact: bool,
    pub supports_searched: usize,
    /// Support attaining `upper`.
    pub best_support: Vec<usize>,
}

impl RestrictedEigenvalue {
    pub fn contains(&self, value: f64, tol: f64) -> bool {
        self.lower - tol <= value && value <= self.upper + tol
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Euclidean projection onto `{v : ||v||_1 <= radius}`.
fn project_l1(v: &mut [f64], radius: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - radius) / (i + 1) as f64;
        if ui > t {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

struct Cone<'a> {
    z: &'a DMatrix<f64>,
    inside: Vec<usize>,
    outside: Vec<usize>,
}

impl Cone<'_> {
    /// Normalizes `beta_S` to unit norm, then pulls `beta_{S^c}` into the cone.
    fn project(&self, beta: &mut DVector<f64>) -> bool {
        let norm = self.inside.iter().map(|&i| beta[i] * beta[i]).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return false;
        }
        for &i in &self.inside {
            beta[i] /= norm;
        }
        let l1: f64 = self.inside.iter().map(|&i| beta[i].abs()).sum();
        let mut out: Vec<f64> = self.outside.iter().map(|&i| beta[i]).collect();
        project_l1(&mut out, CONE * l1);
        for (&i, v) in self.outside.iter().zip(out) {
            beta[i] = v;
        }
        true
    }

    fn value(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&(self.z * beta))
    }

    fn descend(&self, mut beta: DVector<f64>, steps: usize) -> f64 {
        if !self.project(&mut beta) {
            return f64::INFINITY;
        }
        let mut f = self.value(&beta);
        let mut eta = 1.0 / self.z.diagonal().amax().max(f64::MIN_POSITIVE);
        for _ in 0..steps {
            let grad = self.z * &beta * 2.0;
            let mut accepted = false;
            for _ in 0..40 {
                let mut cand = &beta - &grad * eta;
                if self.project(&mut cand) {
                    let fc = self.value(&cand);
                    if fc < f {
                        beta = cand;
                        f = fc;
                        accepted = true;
                        break;
                    }
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
            eta *= 2.0;
        }
        f
    }
}

fn search_support(
    z: &DMatrix<f64>,
    support: &[usize],
    options: &RestrictedEigenvalueOptions,
    stream: u64,
) -> f64 {
    let d = z.nrows();
    let outside: Vec<usize> = (0..d).filter(|i| !support.contains(i)).collect();
    let cone = Cone {
        z,
        inside: support.to_vec(),
        outside,
    };
    let zs = z.select_rows(support).select_columns(support);
    let (_, v) = min_eigenpair(&zs);
    let mut warm = DVector::zeros(d);
    for (k, &i) in support.iter().enumerate() {
        warm[i] = v[k];
    }
    let mut best = cone.descend(warm, options.steps);
    let mut rng = stream_rng(options.seed ^ stream, SOLVER_STREAM);
    for _ in 0..options.restarts {
        let mut beta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale: f64 = rng.random_range(0.0..CONE);
        for &i in &cone.outside {
            beta[i] *= scale;
        }
        best = best.min(cone.descend(beta, options.steps));
    }
    best
}

/// Brackets `C_min(Z, s)` with the default search budget.
pub fn restricted_eigenvalue(z: &DMatrix<f64>, s: usize) -> Result<RestrictedEigenvalue> {
    restricted_eigenvalue_with(z, s, &RestrictedEigenvalueOptions::default())
}

/// Brackets the minimum of `beta^T Z beta / ||beta_S||^2` over supports `|S| <= s`
/// and the cone `||beta_{S^c}||_1 <= 3 ||beta_S||_1`.
///
/// Supports of size exactly `s` suffice: enlarging `S` only shrinks the
/// quotient and keeps the cone condition. The lower end is `lambda_min(Z)`;
/// the upper end is the best point found by projected gradient descent.
pub fn restricted_eigenvalue_with(
    z: &DMatrix<f64>,
    s: usize,
    options: &RestrictedEigenvalueOptions,
) -> Result<RestrictedEigenvalue> {
    let d = z.nrows();
    if z.ncols() != d || d == 0 {
        return invalid("Z must be a nonempty square matrix");
    }
    if s == 0 || s > d {
        return invalid(format!("need 1 <= s <= d, got s = {s}, d = {d}"));
    }
    if (z - z.transpose()).amax() > 1e-10 * z.amax().max(1.0) {
        return invalid("Z must be symmetric");
    }
    let exact = binomial(d, s) <= options.max_supports as f64;
    let supports: Vec<Vec<usize>> = if exact {
        let mut c: Vec<usize> = (0..s).collect();
        let mut all = vec![c.clone()];
        while next_combination(&mut c, d) {
            all.push(c.clone());
        }
        all
    } else {
        let mut rng = stream_rng(options.seed, SOLVER_STREAM);
        (0..options.max_supports)
            .map(|_| {
                let mut v = sample(&mut rng, d, s).into_vec();
                v.sort_unstable();
                v
            })
            .collect()
    };
    let (upper, best) = supports
        .par_iter()
        .enumerate()
        .map(|(i, sup)| (search_support(z, sup, options, i as u64), i))
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    let lower = min_eigenvalue(z);
    Ok(RestrictedEigenvalue {
        lower,
        upper: upper.max(lower),
        exact,
        supports_searched: supports.len(),
        best_support: supports[best].clone(),
    })
}
