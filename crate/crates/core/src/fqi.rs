//! Lasso-regularized fitted Q-iteration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{BatchDataset, FoldSplit, TransitionStats};
use crate::error::{invalid, Result};
use crate::mdp::{argmax_lowest, InitialDistribution, ModelAccess, Policy, SparseLinearMdp};
use crate::ope::{clip, q_table, OpeConfig};
use crate::solvers::{lasso_gram, SolverReport};

/// Value-iteration tolerance used when scoring a learned policy.
pub const SCORING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiResult {
    pub weights: Vec<f64>,
    /// Greedy action per state.
    pub actions: Vec<usize>,
    pub reports: Vec<SolverReport>,
}

impl FqiResult {
    pub fn policy(&self, n_actions: usize) -> Result<Policy> {
        Policy::deterministic(&self.actions, n_actions)
    }
}

/// Greedy action per state, ties to the lowest index.
pub fn greedy_actions(model: &ModelAccess<'_>, q: &[f64]) -> Vec<usize> {
    let n_actions = model.n_actions();
    (0..model.n_states())
        .map(|x| argmax_lowest(&q[x * n_actions..(x + 1) * n_actions]))
        .collect()
}

fn max_values(model: &ModelAccess<'_>, q: &[f64]) -> DVector<f64> {
    let n_actions = model.n_actions();
    DVector::from_fn(model.n_states(), |x, _| {
        q[x * n_actions..(x + 1) * n_actions]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Fitted Q-iteration with a Lasso fit on fold `t` at iteration `t`; targets
/// are `clip(max_a Q_{w_{t-1}}(x', a))`. Uses `iterations`, `lambda1`, `tol`
/// and `max_iter` from the config.
pub fn lasso_fqi(
    dataset: &BatchDataset,
    folds: &FoldSplit,
    model: &ModelAccess<'_>,
    config: &OpeConfig,
) -> Result<FqiResult> {
    if config.iterations == 0 || folds.len() != config.iterations {
        return invalid(format!(
            "{} folds for {} iterations",
            folds.len(),
            config.iterations
        ));
    }
    if !(config.lambda1 >= 0.0 && config.tol > 0.0) {
        return invalid("need lambda1 >= 0 and tol > 0");
    }
    dataset.validate_for(model.n_states(), model.n_actions())?;
    let d = model.dim();
    let all: Vec<usize> = (0..d).collect();
    let cap = model.value_cap();
    let mut w = DVector::zeros(d);
    let mut reports = Vec::with_capacity(config.iterations);
    for t in 0..config.iterations {
        let stats = TransitionStats::new(model, folds.transitions(dataset, t))?;
        let q = q_table(model, w.as_slice(), &all);
        let v = max_values(model, &q).map(|v| clip(v, cap));
        let fit = lasso_gram(
            &stats.gram,
            &stats.xty(&v),
            stats.yty(&v),
            config.lambda1,
            config.tol,
            config.max_iter,
            Some(&w),
        )?;
        w = fit.w;
        reports.push(fit.report);
    }
    let q = q_table(model, w.as_slice(), &all);
    Ok(FqiResult {
        weights: w.iter().copied().collect(),
        actions: greedy_actions(model, &q),
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suboptimality {
    /// `max_x (v*(x) - v^pi(x))`.
    pub sup_gap: f64,
    /// `xi0 . (v* - v^pi)`.
    pub weighted_gap: f64,
}

/// Gaps between the optimal value and the value of `policy`, clamped at zero.
pub fn policy_suboptimality(
    mdp: &SparseLinearMdp,
    policy: &Policy,
    xi0: &InitialDistribution,
) -> Result<Suboptimality> {
    let v_pi = mdp.exact_policy_value(policy, xi0)?;
    let opt = mdp.exact_optimal_value(SCORING_TOL)?;
    let diffs: Vec<f64> = opt
        .values
        .iter()
        .zip(&v_pi.values)
        .map(|(a, b)| a - b)
        .collect();
    let sup_gap = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let weighted_gap = xi0
        .probs()
        .iter()
        .zip(&diffs)
        .map(|(p, g)| p * g)
        .sum::<f64>()
        .max(0.0);
    Ok(Suboptimality {
        sup_gap,
        weighted_gap,
    })
}
