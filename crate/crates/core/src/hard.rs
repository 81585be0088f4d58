//! The two-state lower-bound family.
//!
//! States: `x_bar = 0` (rewarding) and `x_low = 1`. Actions: `a_1..a_{s/2}` at
//! indices `0..s/2`, followed by `a_bar_{i,k}` for `i = 1..s/2` and
//! `k = 1, .., d-s, -1, .., -(d-s)` in that order. The relevant features are
//! the first `s` coordinates. Model `M_i` differs from the others only in which
//! pair of relevant coordinates carries the perturbation `(delta1, delta2)`.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{collect, population_covariance};
use crate::diagnostics::restricted_chi_square;
use crate::error::{invalid, Result};
use crate::linalg::min_eigenvalue;
use crate::mdp::{InitialDistribution, MdpSpec, Policy, SparseLinearMdp};
use crate::solvers::{restricted_eigenvalue_with, RestrictedEigenvalue, RestrictedEigenvalueOptions};

pub const X_BAR: usize = 0;
pub const X_LOW: usize = 1;

/// Orthogonal `s x s` cosine basis whose entries are bounded by `sqrt(2 / s)`.
pub fn dct_matrix(s: usize) -> Result<DMatrix<f64>> {
    if s == 0 {
        return invalid("DCT size must be positive");
    }
    let sf = s as f64;
    Ok(DMatrix::from_fn(s, s, |i, j| {
        if j == 0 {
            1.0 / sf.sqrt()
        } else {
            (2.0 / sf).sqrt()
                * ((2 * i + 1) as f64 * j as f64 * std::f64::consts::PI / (2.0 * sf)).cos()
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceParams {
    pub s: usize,
    pub d: usize,
    pub gamma: f64,
    /// Model index `i`, 1-based, in `1..=s/2`.
    pub model_index: usize,
    pub varsigma1: f64,
    pub varsigma2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl HardInstanceParams {
    pub fn validate(&self) -> Result<()> {
        if self.s < 2 || self.s % 2 != 0 {
            return invalid(format!("s must be even and at least 2, got {}", self.s));
        }
        if self.d <= self.s {
            return invalid(format!(
                "need d > s so behavior actions exist, got d = {}, s = {}",
                self.d, self.s
            ));
        }
        if !(self.gamma >= 2.0 / 3.0 && self.gamma < 1.0) {
            return invalid(format!("gamma must lie in [2/3, 1), got {}", self.gamma));
        }
        if self.model_index == 0 || self.model_index > self.s / 2 {
            return invalid(format!("model index must lie in 1..={}", self.s / 2));
        }
        for (name, v) in [("varsigma1", self.varsigma1), ("varsigma2", self.varsigma2)] {
            if !(v > 0.0 && v < 1.0) {
                return invalid(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        let cap = 2.0 * (1.0 - self.gamma);
        for (name, v) in [("delta1", self.delta1), ("delta2", self.delta2)] {
            if !(v >= 0.0 && v < cap) {
                return invalid(format!("{name} must lie in [0, {cap}), got {v}"));
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.s / 2 + self.s * (self.d - self.s)
    }

    /// Index of `a_i`, `i` 1-based.
    pub fn plain_action(&self, i: usize) -> usize {
        i - 1
    }

    /// Index of `a_bar_{i,k}`, `i` 1-based, `k` in `+-1..=+-(d-s)`.
    pub fn behavior_action(&self, i: usize, k: i64) -> usize {
        let m = self.d - self.s;
        let slot = if k > 0 { k as usize - 1 } else { m + (-k) as usize - 1 };
        self.s / 2 + (i - 1) * 2 * m + slot
    }

    /// Inverse of [`Self::behavior_action`].
    fn decode_behavior(&self, a: usize) -> (usize, i64) {
        let m = self.d - self.s;
        let rel = a - self.s / 2;
        let (i, slot) = (rel / (2 * m) + 1, rel % (2 * m));
        let k = if slot < m { slot as i64 + 1 } else { -((slot - m) as i64 + 1) };
        (i, k)
    }
}

/// `Sigma_circ = xi(x_bar) u u^T + xi(x_low) v v^T` with
/// `u = (1 - varsigma1, varsigma1)` and `v = (varsigma2, 1 - varsigma2)`.
pub fn sigma_circ(varsigma1: f64, varsigma2: f64, xi_bar: f64, xi_low: f64) -> Matrix2<f64> {
    let u = nalgebra::Vector2::new(1.0 - varsigma1, varsigma1);
    let v = nalgebra::Vector2::new(varsigma2, 1.0 - varsigma2);
    u * u.transpose() * xi_bar + v * v.transpose() * xi_low
}

#[derive(Debug, Clone)]
pub struct HardInstanceBundle {
    pub params: HardInstanceParams,
    pub mdp: SparseLinearMdp,
    /// Uniform over the `a_bar` actions at both states.
    pub behavior: Policy,
    /// Point mass at `x_bar`.
    pub xi0_target: InitialDistribution,
    /// Uniform over both states.
    pub data_init: InitialDistribution,
    /// `Sigma_circ` at the single-step data marginal `(1/2, 1/2)`.
    pub sigma_circ: Matrix2<f64>,
    pub lambda_min_sigma_circ: f64,
    /// Smallest transition probability among behavior actions.
    pub p_min: f64,
}

fn relevant_pair(s: usize, pair: usize, first: f64, second: f64, theta: &DMatrix<f64>) -> Vec<f64> {
    let scale = (s as f64 / 2.0).sqrt();
    (0..s)
        .map(|r| scale * (theta[(r, 2 * pair)] * first + theta[(r, 2 * pair + 1)] * second))
        .collect()
}

pub fn build_hard_instance(params: &HardInstanceParams) -> Result<HardInstanceBundle> {
    params.validate()?;
    let HardInstanceParams {
        s,
        d,
        gamma,
        model_index,
        varsigma1,
        varsigma2,
        delta1,
        delta2,
    } = *params;
    let m = d - s;
    let theta = dct_matrix(s)?;
    let theta_bar = dct_matrix(m)?;
    let n_actions = params.n_actions();
    let off_scale = (m as f64 / 2.0).sqrt();

    let mut features = Vec::with_capacity(2 * n_actions);
    for x in [X_BAR, X_LOW] {
        for a in 0..n_actions {
            let (i, k) = if a < s / 2 {
                (a + 1, 0)
            } else {
                params.decode_behavior(a)
            };
            let pair = i - 1;
            let mut phi = if x == X_LOW {
                relevant_pair(s, pair, varsigma2, 1.0 - varsigma2, &theta)
            } else if k == 0 {
                relevant_pair(s, pair, 1.0, 0.0, &theta)
            } else {
                relevant_pair(s, pair, 1.0 - varsigma1, varsigma1, &theta)
            };
            if k == 0 {
                phi.extend(std::iter::repeat_n(0.0, m));
            } else {
                let col = k.unsigned_abs() as usize - 1;
                let sign = k.signum() as f64;
                phi.extend((0..m).map(|r| sign * off_scale * theta_bar[(r, col)]));
            }
            features.push(phi);
        }
    }

    // psi(x_bar) = sqrt(2/s) Theta u and psi(x_low) = sqrt(2/s) Theta v, where
    // every pair holds (1 - delta1, delta2) / (delta1, 1 - delta2) except the
    // model's own pair, which holds (1, 0) / (0, 1).
    let mut u = vec![0.0; s];
    let mut v = vec![0.0; s];
    for pair in 0..s / 2 {
        let (ub, vb) = if pair + 1 == model_index {
            ((1.0, 0.0), (0.0, 1.0))
        } else {
            ((1.0 - delta1, delta2), (delta1, 1.0 - delta2))
        };
        u[2 * pair] = ub.0;
        u[2 * pair + 1] = ub.1;
        v[2 * pair] = vb.0;
        v[2 * pair + 1] = vb.1;
    }
    let scale = (2.0 / s as f64).sqrt();
    let psi: Vec<Vec<f64>> = (0..s)
        .map(|r| {
            let pb: f64 = (0..s).map(|c| theta[(r, c)] * u[c]).sum();
            let pl: f64 = (0..s).map(|c| theta[(r, c)] * v[c]).sum();
            vec![scale * pb, scale * pl]
        })
        .collect();

    let reward = vec![vec![1.0; n_actions], vec![0.0; n_actions]];
    let mdp = SparseLinearMdp::new(MdpSpec {
        n_states: 2,
        n_actions,
        gamma,
        d,
        support: (0..s).collect(),
        features,
        psi,
        reward,
    })?;

    let weight = 1.0 / (s * m) as f64;
    let row: Vec<f64> = (0..n_actions).map(|a| if a < s / 2 { 0.0 } else { weight }).collect();
    let behavior = Policy::new(vec![row.clone(), row])?;
    let p_min = (s / 2..n_actions)
        .flat_map(|a| [X_BAR, X_LOW].map(|x| (x, a)))
        .flat_map(|(x, a)| mdp.transition_row(x, a).to_vec())
        .fold(f64::INFINITY, f64::min);
    let sc = sigma_circ(varsigma1, varsigma2, 0.5, 0.5);
    Ok(HardInstanceBundle {
        params: *params,
        lambda_min_sigma_circ: sc.symmetric_eigenvalues().min(),
        sigma_circ: sc,
        p_min,
        behavior,
        xi0_target: InitialDistribution::point_mass(2, X_BAR)?,
        data_init: InitialDistribution::uniform(2),
        mdp,
    })
}

/// `(delta1, delta2)` maximizing `delta1` subject to
/// `(delta1, -delta2) Sigma_circ (delta1, -delta2)^T <= s p_min / (100 N)`.
pub fn perturbation_sizes(sc: &Matrix2<f64>, s: usize, p_min: f64, n: usize) -> (f64, f64) {
    let det = sc.determinant();
    let budget = (s as f64 * p_min / (100.0 * n as f64)).sqrt();
    let delta1 = (sc[(1, 1)] / det).sqrt() * budget;
    let delta2 = (sc[(0, 1)] * sc[(0, 1)] / (sc[(1, 1)] * det)).sqrt() * budget;
    (delta1, delta2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultHardParams {
    pub params: HardInstanceParams,
    /// `N >= 2000 s L / (1 - gamma)`.
    pub sample_size_ok: bool,
    pub p_min: f64,
}

/// Default parameters: `varsigma1 = varsigma2 = (1 - gamma) / (2 gamma)` and
/// the perturbation sizes of [`perturbation_sizes`] at data marginal
/// `(1/2, 1/2)`. Since `p_min` itself depends on the perturbation, the pair is
/// found by fixed-point iteration starting from the unperturbed `p_min`.
pub fn default_hard_params(s: usize, d: usize, n: usize, l: usize, gamma: f64) -> Result<DefaultHardParams> {
    if !(gamma >= 2.0 / 3.0 && gamma < 1.0) {
        return invalid(format!("gamma must lie in [2/3, 1), got {gamma}"));
    }
    if n == 0 || l == 0 {
        return invalid("need N, L >= 1");
    }
    let varsigma = (1.0 - gamma) / (2.0 * gamma);
    let sc = sigma_circ(varsigma, varsigma, 0.5, 0.5);
    let mut params = HardInstanceParams {
        s,
        d,
        gamma,
        model_index: 1,
        varsigma1: varsigma,
        varsigma2: varsigma,
        delta1: 0.0,
        delta2: 0.0,
    };
    let mut p_min = build_hard_instance(&params)?.p_min;
    for _ in 0..100 {
        let (d1, d2) = perturbation_sizes(&sc, s, p_min, n);
        params.delta1 = d1;
        params.delta2 = d2;
        let next = build_hard_instance(&params)?.p_min;
        let done = (next - p_min).abs() <= 1e-15;
        p_min = next;
        if done {
            break;
        }
    }
    let sample_size_ok = n as f64 >= 2000.0 * (s * l) as f64 / (1.0 - gamma);
    if !sample_size_ok {
        log::warn!("N = {n} is below the sample-size proviso 2000 s L / (1 - gamma)");
    }
    Ok(DefaultHardParams {
        params,
        sample_size_ok,
        p_min,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomyReport {
    /// Largest entrywise gap between the population covariance and the
    /// predicted block-diagonal form.
    pub block_error: f64,
    pub block_ok: bool,
    pub c_min: RestrictedEigenvalue,
    pub lambda_min_sigma_circ: f64,
    pub c_min_ok: bool,
    /// `1 + chi^2` over the relevant features for the optimal target.
    pub one_plus_chi_square: f64,
    /// `s Sigma_circ_22 / (2 det Sigma_circ)`.
    pub predicted_one_plus_chi_square: f64,
    pub chi_square_ok: bool,
    pub violations: Vec<String>,
}

impl AnatomyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const ANATOMY_TOL: f64 = 1e-6;

/// Predicted single-step covariance: `Theta blockdiag(Sigma_circ) Theta^T` on
/// the relevant block and `I / 2` on the rest.
pub fn predicted_covariance(params: &HardInstanceParams) -> Result<DMatrix<f64>> {
    let (s, d) = (params.s, params.d);
    let theta = dct_matrix(s)?;
    let sc = sigma_circ(params.varsigma1, params.varsigma2, 0.5, 0.5);
    let mut block = DMatrix::zeros(s, s);
    for pair in 0..s / 2 {
        for r in 0..2 {
            for c in 0..2 {
                block[(2 * pair + r, 2 * pair + c)] = sc[(r, c)];
            }
        }
    }
    let mut sigma = DMatrix::identity(d, d) * 0.5;
    sigma
        .view_mut((0, 0), (s, s))
        .copy_from(&(&theta * block * theta.transpose()));
    Ok(sigma)
}

/// Checks the three structural identities behind the lower bound.
pub fn verify_lower_bound_anatomy(
    bundle: &HardInstanceBundle,
    re_options: &RestrictedEigenvalueOptions,
) -> Result<AnatomyReport> {
    let p = &bundle.params;
    let mut violations = Vec::new();

    let sigma = population_covariance(&bundle.mdp, &bundle.behavior, &bundle.data_init, 1)?;
    let block_error = (&sigma.sigma - predicted_covariance(p)?).amax();
    let block_ok = block_error <= ANATOMY_TOL;
    if !block_ok {
        violations.push(format!(
            "covariance deviates from the block-diagonal form by {block_error:.3e}"
        ));
    }

    let c_min = restricted_eigenvalue_with(&sigma.sigma, p.s, re_options)?;
    let c_min_ok = c_min.contains(bundle.lambda_min_sigma_circ, ANATOMY_TOL);
    if !c_min_ok {
        violations.push(format!(
            "restricted eigenvalue bracket [{}, {}] misses lambda_min(Sigma_circ) = {}",
            c_min.lower, c_min.upper, bundle.lambda_min_sigma_circ
        ));
    }

    let optimal = bundle.mdp.exact_optimal_value(1e-12)?.policy;
    let support: Vec<usize> = (0..p.s).collect();
    let chi = restricted_chi_square(
        &bundle.mdp,
        &optimal,
        &bundle.xi0_target,
        &bundle.behavior,
        &bundle.data_init,
        1,
        &support,
    )?;
    let sc = bundle.sigma_circ;
    let predicted = p.s as f64 * sc[(1, 1)] / (2.0 * sc.determinant());
    let one_plus = 1.0 + chi;
    let chi_square_ok = (one_plus - predicted).abs() <= ANATOMY_TOL * predicted.max(1.0);
    if !chi_square_ok {
        violations.push(format!(
            "1 + chi^2 = {one_plus} but the closed form gives {predicted}"
        ));
    }

    Ok(AnatomyReport {
        block_error,
        block_ok,
        c_min,
        lambda_min_sigma_circ: bundle.lambda_min_sigma_circ,
        c_min_ok,
        one_plus_chi_square: one_plus,
        predicted_one_plus_chi_square: predicted,
        chi_square_ok,
        violations,
    })
}

/// `gamma delta1 / (2 (1 - gamma)) / (1 - gamma + 2 gamma varsigma2)`: the
/// minimum value loss at `x_bar` of any policy avoiding the model's own action.
pub fn value_gap_bound(params: &HardInstanceParams) -> f64 {
    let g = params.gamma;
    g * params.delta1 / (2.0 * (1.0 - g)) / (1.0 - g + 2.0 * g * params.varsigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate {
    /// Fraction of datasets from model `i` with `L_j / L_i >= 1/2`.
    pub probability: f64,
    pub repetitions: usize,
    /// Whether `max(delta1, delta2) <= p_min / 2`.
    pub perturbation_small: bool,
}

/// Monte Carlo estimate of `P_i(L_j(D) / L_i(D) >= 1/2)` for datasets of `k`
/// behavior episodes of length `l` drawn from model `i`.
pub fn likelihood_ratio_estimate(
    params: &HardInstanceParams,
    other_index: usize,
    k: usize,
    l: usize,
    repetitions: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    if repetitions == 0 {
        return invalid("need at least one repetition");
    }
    let truth = build_hard_instance(params)?;
    let alt = build_hard_instance(&HardInstanceParams {
        model_index: other_index,
        ..*params
    })?;
    let mut seeds = crate::rng::stream_rng(seed, crate::rng::GENERATOR_STREAM);
    let mut hits = 0usize;
    for _ in 0..repetitions {
        let ds = collect(
            &truth.mdp,
            std::slice::from_ref(&truth.behavior),
            &truth.data_init,
            k,
            l,
            seeds.random(),
            "uniform over perturbed actions",
        )?;
        let log_ratio: f64 = ds
            .transitions()
            .map(|t| {
                let pj = alt.mdp.transition_row(t.x, t.a)[t.x_next];
                let pi = truth.mdp.transition_row(t.x, t.a)[t.x_next];
                pj.ln() - pi.ln()
            })
            .sum();
        if log_ratio >= -std::f64::consts::LN_2 {
            hits += 1;
        }
    }
    Ok(LikelihoodEstimate {
        probability: hits as f64 / repetitions as f64,
        repetitions,
        perturbation_small: params.delta1.max(params.delta2) <= truth.p_min / 2.0,
    })
}

/// Smallest eigenvalue of the population covariance of a bundle at episode length `l`.
pub fn covariance_min_eigenvalue(bundle: &HardInstanceBundle, l: usize) -> Result<f64> {
    let sigma = population_covariance(&bundle.mdp, &bundle.behavior, &bundle.data_init, l)?;
    Ok(min_eigenvalue(&sigma.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_is_orthogonal_and_bounded() {
        for s in [1, 2, 4, 8, 16] {
            let t = dct_matrix(s).unwrap();
            let err = (t.transpose() * &t - DMatrix::identity(s, s)).amax();
            assert!(err < 1e-10, "s = {s}: {err}");
            let bound = t.amax() * (s as f64).sqrt();
            assert!(bound <= 2f64.sqrt() + 1e-12);
        }
        assert_eq!(dct_matrix(1).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn action_layout_round_trips() {
        let p = HardInstanceParams {
            s: 4,
            d: 7,
            gamma: 0.8,
            model_index: 2,
            varsigma1: 0.1,
            varsigma2: 0.1,
            delta1: 0.0,
            delta2: 0.0,
        };
        assert_eq!(p.n_actions(), 2 + 12);
        for i in 1..=2 {
            for k in (1..=3).chain(-3..=-1) {
                assert_eq!(p.decode_behavior(p.behavior_action(i, k)), (i, k));
            }
        }
    }

    #[test]
    fn unperturbed_models_coincide() {
        let base = HardInstanceParams {
            s: 4,
            d: 6,
            gamma: 0.75,
            model_index: 1,
            varsigma1: 0.2,
            varsigma2: 0.15,
            delta1: 0.0,
            delta2: 0.0,
        };
        let a = build_hard_instance(&base).unwrap();
        let b = build_hard_instance(&HardInstanceParams { model_index: 2, ..base }).unwrap();
        for x in 0..2 {
            for act in 0..base.n_actions() {
                let (ra, rb) = (a.mdp.transition_row(x, act), b.mdp.transition_row(x, act));
                assert!((ra[0] - rb[0]).abs() < 1e-12);
            }
        }
        let v = a
            .mdp
            .exact_optimal_value(1e-12)
            .unwrap();
        assert!((v.values[X_BAR] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn defaults_at_two_thirds() {
        let dp = default_hard_params(2, 6, 1_000_000, 1, 2.0 / 3.0).unwrap();
        assert!((dp.params.varsigma2 - 0.25).abs() < 1e-15);
        let sc = sigma_circ(0.25, 0.25, 0.5, 0.5);
        let ratio = dp.params.delta1 / dp.params.delta2;
        assert!((ratio - sc[(1, 1)] / sc[(0, 1)].abs()).abs() < 1e-9);
        assert!(dp.sample_size_ok);
        let small = default_hard_params(2, 6, 100, 1, 2.0 / 3.0).unwrap();
        assert!(!small.sample_size_ok);
    }

    #[test]
    fn invalid_params_rejected() {
        let good = default_hard_params(2, 6, 1_000_000, 1, 0.75).unwrap().params;
        assert!(build_hard_instance(&HardInstanceParams { s: 3, ..good }).is_err());
        assert!(build_hard_instance(&HardInstanceParams { d: 2, ..good }).is_err());
        assert!(build_hard_instance(&HardInstanceParams { gamma: 0.5, ..good }).is_err());
        assert!(build_hard_instance(&HardInstanceParams { model_index: 2, ..good }).is_err());
        assert!(build_hard_instance(&HardInstanceParams { delta1: 0.5, ..good }).is_err());
    }
}
