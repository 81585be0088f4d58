//! Distribution-mismatch diagnostics: restricted chi-square divergence between
//! the target occupancy and the data distribution, its discounted-series form,
//! and an audit bundling these with the restricted eigenvalue and signal check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{population_covariance, CovarianceMatrix};
use crate::error::{invalid, Error, Result};
use crate::linalg::guarded_spd_solve;
use crate::mdp::{InitialDistribution, Policy, SparseLinearMdp};
use crate::solvers::{
    restricted_eigenvalue_with, signal_strength_check, RestrictedEigenvalue,
    RestrictedEigenvalueOptions, SignalCheck,
};

fn check_features(mdp: &SparseLinearMdp, features: &[usize]) -> Result<()> {
    if features.is_empty() {
        return invalid("feature set is empty");
    }
    if features.iter().any(|&j| j >= mdp.dim()) {
        return invalid("feature index out of range");
    }
    let mut sorted = features.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != features.len() {
        return invalid("feature set has duplicates");
    }
    Ok(())
}

/// Discounted state occupancy `(1 - gamma) (I - gamma P^T)^{-1} xi0`, solved directly.
fn state_occupancy(mdp: &SparseLinearMdp, policy: &Policy, xi0: &InitialDistribution) -> Result<DVector<f64>> {
    let n = mdp.n_states();
    let p = mdp.policy_transition(policy);
    let system = DMatrix::identity(n, n) - p.transpose() * mdp.gamma();
    let rhs = DVector::from_column_slice(xi0.probs()) * (1.0 - mdp.gamma());
    system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular occupancy system".into()))
}

/// `nu = E_{mu^pi}[phi_F(x, a)]` for the target's discounted occupancy.
pub fn target_feature_mean(
    mdp: &SparseLinearMdp,
    target: &Policy,
    xi0: &InitialDistribution,
    features: &[usize],
) -> Result<DVector<f64>> {
    if xi0.len() != mdp.n_states() {
        return invalid("initial distribution does not match the MDP");
    }
    let rho = state_occupancy(mdp, target, xi0)?;
    let phi_pi = mdp.policy_features(target).select_columns(features);
    Ok(phi_pi.tr_mul(&rho))
}

/// `nu^T Sigma_FF^{-1} nu - 1` for any covariance (population or empirical).
pub fn chi_square_with_covariance(
    mdp: &SparseLinearMdp,
    target: &Policy,
    xi0: &InitialDistribution,
    sigma: &CovarianceMatrix,
    features: &[usize],
) -> Result<f64> {
    check_features(mdp, features)?;
    if sigma.dim() != mdp.dim() {
        return invalid("covariance dimension does not match the MDP");
    }
    let nu = target_feature_mean(mdp, target, xi0, features)?;
    let solved = guarded_spd_solve(&sigma.restrict(features), &nu, features)?;
    Ok(nu.dot(&solved) - 1.0)
}

/// Restricted chi-square divergence of the target occupancy from the data
/// distribution over the linear class spanned by `features`.
///
/// The data distribution is the exact step-average of the behavior marginals
/// over an episode of length `l` started from `data_init`.
pub fn restricted_chi_square(
    mdp: &SparseLinearMdp,
    target: &Policy,
    xi0: &InitialDistribution,
    behavior: &Policy,
    data_init: &InitialDistribution,
    l: usize,
    features: &[usize],
) -> Result<f64> {
    let sigma = population_covariance(mdp, behavior, data_init, l)?;
    chi_square_with_covariance(mdp, target, xi0, &sigma, features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    /// `(1 - gamma) sum_t gamma^t ||nu_t||_{Sigma^{-1}}`.
    pub value: f64,
    pub terms: usize,
    /// Bound on the neglected tail.
    pub tail_bound: f64,
}

/// The discounted series `(1 - gamma) sum_t gamma^t sqrt(nu_t^T Sigma^{-1} nu_t)`
/// with `nu_t = E[phi_F(x_t, a_t)]` under the target from `xi0`.
///
/// Every `nu_t` is a convex combination of the per-state vectors
/// `phi^pi_F(x)`, so `B = max_x ||phi^pi_F(x)||_{Sigma^{-1}}` bounds every
/// term; the sum stops once `gamma^t B / (1 - gamma) <= horizon_tol`.
pub fn divergence_series(
    mdp: &SparseLinearMdp,
    target: &Policy,
    xi0: &InitialDistribution,
    sigma: &CovarianceMatrix,
    features: &[usize],
    horizon_tol: f64,
) -> Result<SeriesValue> {
    check_features(mdp, features)?;
    if !(horizon_tol > 0.0) {
        return invalid("horizon tolerance must be positive");
    }
    if xi0.len() != mdp.n_states() || sigma.dim() != mdp.dim() {
        return invalid("initial distribution or covariance does not match the MDP");
    }
    let sig = sigma.restrict(features);
    let phi_pi = mdp.policy_features(target).select_columns(features);
    // Sigma^{-1} phi^pi(x)^T for every state at once.
    let mut whitened = DMatrix::zeros(features.len(), mdp.n_states());
    for x in 0..mdp.n_states() {
        let col = guarded_spd_solve(&sig, &phi_pi.row(x).transpose(), features)?;
        whitened.set_column(x, &col);
    }
    let bound = (0..mdp.n_states())
        .map(|x| phi_pi.row(x).dot(&whitened.column(x).transpose()).max(0.0).sqrt())
        .fold(0.0, f64::max);
    let gamma = mdp.gamma();
    let p = mdp.policy_transition(target);
    let mut rho = DVector::from_column_slice(xi0.probs());
    let (mut sum, mut weight, mut terms) = (0.0, 1.0 - gamma, 0usize);
    let mut discount = 1.0;
    while discount * bound / (1.0 - gamma) > horizon_tol {
        let nu = phi_pi.tr_mul(&rho);
        let w = &whitened * &rho;
        sum += weight * nu.dot(&w).max(0.0).sqrt();
        rho = p.tr_mul(&rho);
        weight *= gamma;
        discount *= gamma;
        terms += 1;
    }
    Ok(SeriesValue {
        value: sum,
        terms,
        tail_bound: discount * bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub chi_square: f64,
    /// Discounted-series value on the same features; compare with `sqrt(1 + chi_square)`.
    pub series_value: f64,
    pub series_terms: usize,
    pub c_min: RestrictedEigenvalue,
    /// Signal check against the certified lower end of `c_min`; absent when
    /// that bound is not positive.
    pub signal: Option<SignalCheck>,
    pub feature_set: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AuditInput<'a> {
    pub mdp: &'a SparseLinearMdp,
    pub behavior: &'a Policy,
    pub target: &'a Policy,
    pub xi0: &'a InitialDistribution,
    pub data_init: &'a InitialDistribution,
    pub episode_len: usize,
    pub n: usize,
    pub delta: f64,
    /// Features for the divergence; defaults to the model's support.
    pub features: Option<&'a [usize]>,
    pub horizon_tol: f64,
    pub re_options: RestrictedEigenvalueOptions,
}

pub fn audit(input: &AuditInput<'_>) -> Result<MismatchReport> {
    let mdp = input.mdp;
    let features = input.features.unwrap_or(mdp.support()).to_vec();
    let sigma = population_covariance(mdp, input.behavior, input.data_init, input.episode_len)?;
    let chi_square = chi_square_with_covariance(mdp, input.target, input.xi0, &sigma, &features)?;
    let series = divergence_series(mdp, input.target, input.xi0, &sigma, &features, input.horizon_tol)?;
    let c_min = restricted_eigenvalue_with(&sigma.sigma, mdp.sparsity(), &input.re_options)?;
    let signal = if c_min.lower > 0.0 {
        Some(signal_strength_check(mdp, input.target, input.n, input.delta, c_min.lower)?)
    } else {
        None
    };
    Ok(MismatchReport {
        chi_square,
        series_value: series.value,
        series_terms: series.terms,
        c_min,
        signal,
        feature_set: features,
    })
}
