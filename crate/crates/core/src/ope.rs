//! Fitted Q-evaluation: the Lasso variant on episode-disjoint folds and the
//! post-selection variant (group-Lasso screening, then ridge refits).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BatchDataset, FoldSplit, TransitionStats};
use crate::error::{invalid, Result};
use crate::mdp::{policy_features, sample_index, InitialDistribution, ModelAccess, Policy};
use crate::rng::{stream_rng, MONTE_CARLO_STREAM};
use crate::solvers::{
    default_iterations, default_lambda1, default_lambda2, default_lambda3, group_lasso_gram,
    lasso_gram, RidgeSolver, SolverReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeConfig {
    /// Iteration count `T`; also the number of folds for the Lasso variants.
    pub iterations: usize,
    /// Monte Carlo draws for the final average; `None` means one per transition.
    pub monte_carlo: Option<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Ridge weight; `None` uses [`default_lambda3`] on the selected features.
    pub lambda3: Option<f64>,
    pub delta: f64,
    /// KKT tolerance for the Lasso and group-Lasso solvers.
    pub tol: f64,
    /// Sweep limit per solver call.
    pub max_iter: usize,
    /// Seed of the Monte Carlo stream.
    pub seed: u64,
}

impl OpeConfig {
    /// Default formulas for `T`, `lambda1`, `lambda2` and `lambda3`.
    pub fn defaults(n: usize, d: usize, gamma: f64, delta: f64, seed: u64) -> Result<Self> {
        let (t, _) = default_iterations(n, gamma)?;
        Ok(Self {
            iterations: t,
            monte_carlo: None,
            lambda1: default_lambda1(n, t, d, gamma, delta)?,
            lambda2: default_lambda2(n, d, delta)?,
            lambda3: None,
            delta,
            tol: 1e-8,
            max_iter: 10_000,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return invalid("iteration count must be at least 1");
        }
        if self.monte_carlo == Some(0) {
            return invalid("Monte Carlo sample count must be at least 1");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda3.unwrap_or(0.0) >= 0.0) {
            return invalid("regularization weights must be nonnegative");
        }
        if !(self.tol > 0.0) {
            return invalid("solver tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeResult {
    pub value: f64,
    pub std_error: f64,
    /// `w_1, ..., w_T`; entries follow `features`.
    pub weights: Vec<Vec<f64>>,
    /// Feature coordinates the weights live on.
    pub features: Vec<usize>,
    /// Screened feature set (post-selection only).
    pub selected: Option<Vec<usize>>,
    /// Post-selection found no feature, so `Q = r`.
    pub degenerate: bool,
    /// Ridge fell back to the minimum-norm solution.
    pub min_norm: bool,
    pub lambda3: Option<f64>,
    pub reports: Vec<SolverReport>,
    pub screening_report: Option<SolverReport>,
}

/// `Q(x, a) = r(x, a) + gamma * phi_F(x, a)^T w` over all pairs, where `F = features`.
pub fn q_table(model: &ModelAccess<'_>, w: &[f64], features: &[usize]) -> Vec<f64> {
    let (n_states, n_actions) = (model.n_states(), model.n_actions());
    let mut q = Vec::with_capacity(n_states * n_actions);
    for x in 0..n_states {
        for a in 0..n_actions {
            let phi = model.features(x, a);
            let g: f64 = features.iter().zip(w).map(|(&j, wj)| phi[j] * wj).sum();
            q.push(model.reward(x, a) + model.gamma() * g);
        }
    }
    q
}

/// `V(x) = sum_a pi(a | x) Q(x, a)`.
pub fn policy_state_values(model: &ModelAccess<'_>, policy: &Policy, q: &[f64]) -> DVector<f64> {
    let n_actions = model.n_actions();
    DVector::from_fn(model.n_states(), |x, _| {
        (0..n_actions).map(|a| policy.prob(x, a) * q[x * n_actions + a]).sum()
    })
}

pub(crate) fn clip(v: f64, cap: f64) -> f64 {
    v.clamp(0.0, cap)
}

/// Clipped Monte Carlo average of `Q(x, a)` with `x ~ xi0`, `a ~ pi(. | x)`.
///
/// Returns the estimate and its standard error.
pub fn monte_carlo_value(
    model: &ModelAccess<'_>,
    q: &[f64],
    policy: &Policy,
    xi0: &InitialDistribution,
    m: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if m == 0 {
        return invalid("Monte Carlo sample count must be at least 1");
    }
    if q.len() != model.n_states() * model.n_actions() || xi0.len() != model.n_states() {
        return invalid("Q table or initial distribution does not match the model");
    }
    let cap = model.value_cap();
    let mut rng = stream_rng(seed, MONTE_CARLO_STREAM);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..m {
        let x = sample_index(xi0.probs(), rng.random());
        let a = sample_index(policy.row(x), rng.random());
        let v = clip(q[x * model.n_actions() + a], cap);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / m as f64;
    let se = if m > 1 {
        let var = ((sum_sq - m as f64 * mean * mean) / (m - 1) as f64).max(0.0);
        (var / m as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

fn check_inputs(
    model: &ModelAccess<'_>,
    dataset: &BatchDataset,
    policy: &Policy,
    xi0: &InitialDistribution,
) -> Result<()> {
    dataset.validate_for(model.n_states(), model.n_actions())?;
    if policy.n_states() != model.n_states() || policy.n_actions() != model.n_actions() {
        return invalid("target policy does not match the model");
    }
    if xi0.len() != model.n_states() {
        return invalid("initial distribution does not match the model");
    }
    Ok(())
}

/// Fitted Q-evaluation with a Lasso fit on fold `t` at iteration `t`.
///
/// Targets are the clipped values `clip(sum_a pi(a|x') Q_{w_{t-1}}(x', a))`
/// with `w_0 = 0`; the output is the clipped Monte Carlo average of `Q_{w_T}`.
pub fn lasso_fqe(
    dataset: &BatchDataset,
    folds: &FoldSplit,
    model: &ModelAccess<'_>,
    target: &Policy,
    xi0: &InitialDistribution,
    config: &OpeConfig,
) -> Result<OpeResult> {
    config.validate()?;
    check_inputs(model, dataset, target, xi0)?;
    if folds.len() != config.iterations {
        return invalid(format!(
            "{} folds for {} iterations",
            folds.len(),
            config.iterations
        ));
    }
    let d = model.dim();
    let all: Vec<usize> = (0..d).collect();
    let cap = model.value_cap();
    let mut w = DVector::zeros(d);
    let mut weights = Vec::with_capacity(config.iterations);
    let mut reports = Vec::with_capacity(config.iterations);
    for t in 0..config.iterations {
        let stats = TransitionStats::new(model, folds.transitions(dataset, t))?;
        let q = q_table(model, w.as_slice(), &all);
        let v = policy_state_values(model, target, &q).map(|v| clip(v, cap));
        let fit = lasso_gram(
            &stats.gram,
            &stats.xty(&v),
            stats.yty(&v),
            config.lambda1,
            config.tol,
            config.max_iter,
            Some(&w),
        )?;
        if !fit.report.converged {
            log::warn!(
                "lasso did not converge at iteration {t}: KKT violation {:.3e}",
                fit.report.kkt_violation
            );
        }
        w = fit.w;
        weights.push(w.iter().copied().collect());
        reports.push(fit.report);
    }
    let q = q_table(model, w.as_slice(), &all);
    let m = config.monte_carlo.unwrap_or(dataset.len());
    let (value, std_error) = monte_carlo_value(model, &q, target, xi0, m, config.seed)?;
    Ok(OpeResult {
        value,
        std_error,
        weights,
        features: all,
        selected: None,
        degenerate: false,
        min_norm: false,
        lambda3: None,
        reports,
        screening_report: None,
    })
}

/// Ridge-refit fitted Q-evaluation on a fixed feature subset using every
/// transition at every iteration. Targets are
/// `sum_a pi(a|x') (r(x', a) + gamma phi_F(x', a)^T w_{t-1})`, unclipped.
pub fn fitted_ridge_evaluation(
    dataset: &BatchDataset,
    model: &ModelAccess<'_>,
    target: &Policy,
    xi0: &InitialDistribution,
    config: &OpeConfig,
    features: &[usize],
) -> Result<OpeResult> {
    config.validate()?;
    check_inputs(model, dataset, target, xi0)?;
    if features.iter().any(|&j| j >= model.dim()) {
        return invalid("feature index out of range");
    }
    let m = config.monte_carlo.unwrap_or(dataset.len());
    if features.is_empty() {
        let q = q_table(model, &[], &[]);
        let (value, std_error) = monte_carlo_value(model, &q, target, xi0, m, config.seed)?;
        return Ok(OpeResult {
            value,
            std_error,
            weights: Vec::new(),
            features: Vec::new(),
            selected: None,
            degenerate: true,
            min_norm: false,
            lambda3: config.lambda3,
            reports: Vec::new(),
            screening_report: None,
        });
    }
    let stats = TransitionStats::new(model, dataset.transitions())?.restrict(features);
    let lambda3 = match config.lambda3 {
        Some(l) => l,
        None => default_lambda3(
            crate::linalg::min_eigenvalue(&stats.gram),
            features.len(),
            config.delta,
            dataset.meta().episode_len,
        )?,
    };
    let solver = RidgeSolver::new(&stats.gram, lambda3)?;
    let mut w = DVector::zeros(features.len());
    let mut weights = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let q = q_table(model, w.as_slice(), features);
        let v = policy_state_values(model, target, &q);
        w = solver.solve(&stats.xty(&v));
        weights.push(w.iter().copied().collect());
    }
    let q = q_table(model, w.as_slice(), features);
    let (value, std_error) = monte_carlo_value(model, &q, target, xi0, m, config.seed)?;
    Ok(OpeResult {
        value,
        std_error,
        weights,
        features: features.to_vec(),
        selected: None,
        degenerate: false,
        min_norm: solver.min_norm(),
        lambda3: Some(lambda3),
        reports: Vec::new(),
        screening_report: None,
    })
}

/// Group-Lasso estimate of the embedding matrix on the full dataset.
///
/// Returns `(K_hat, selected rows, report)`.
pub fn screen_features(
    dataset: &BatchDataset,
    model: &ModelAccess<'_>,
    target: &Policy,
    config: &OpeConfig,
) -> Result<(DMatrix<f64>, Vec<usize>, SolverReport)> {
    let stats = TransitionStats::new(model, dataset.transitions())?;
    let phi_pi = policy_features(model, target);
    let cross = &stats.cross * &phi_pi;
    let yty: f64 = (0..model.n_states())
        .map(|x| stats.next_freq[x] * phi_pi.row(x).norm_squared())
        .sum();
    let fit = group_lasso_gram(&stats.gram, &cross, yty, config.lambda2, config.tol, config.max_iter)?;
    if !fit.report.converged {
        log::warn!(
            "group lasso did not converge: KKT violation {:.3e}",
            fit.report.kkt_violation
        );
    }
    Ok((fit.k, fit.selected, fit.report))
}

/// Post-selection fitted Q-evaluation: screen features with the group Lasso,
/// then run [`fitted_ridge_evaluation`] on the selected set.
pub fn post_selection_fqe(
    dataset: &BatchDataset,
    model: &ModelAccess<'_>,
    target: &Policy,
    xi0: &InitialDistribution,
    config: &OpeConfig,
) -> Result<OpeResult> {
    config.validate()?;
    check_inputs(model, dataset, target, xi0)?;
    let (_, selected, report) = screen_features(dataset, model, target, config)?;
    let mut result = fitted_ridge_evaluation(dataset, model, target, xi0, config, &selected)?;
    result.selected = Some(selected);
    result.screening_report = Some(report);
    Ok(result)
}

/// Dense baseline: ridge-refit fitted Q-evaluation on all `d` features.
pub fn ridge_fqe_baseline(
    dataset: &BatchDataset,
    model: &ModelAccess<'_>,
    target: &Policy,
    xi0: &InitialDistribution,
    config: &OpeConfig,
) -> Result<OpeResult> {
    let all: Vec<usize> = (0..model.dim()).collect();
    fitted_ridge_evaluation(dataset, model, target, xi0, config, &all)
}
