//! Finite sparse linear discounted MDPs and their exact oracles.
//!
//! The transition kernel of a [`SparseLinearMdp`] factors through a small set
//! of relevant features,
//!
//! ```text
//! P(x' | x, a) = sum_{k in K} phi_k(x, a) * psi_k(x')
//! ```
//!
//! with `|K| = s <= d`. Everything in this module has full access to `P`; the
//! learning algorithms only ever see a [`ModelAccess`] view (features, reward,
//! discount), never `psi` or `P`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const ROW_SUM_TOL: f64 = 1e-8;
const PROB_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-12;

/// Serialized form of a [`SparseLinearMdp`].
///
/// `features` has one row per state-action pair in `x * n_actions + a` order,
/// `psi` one row per entry of `support`, `reward` one row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub d: usize,
    pub support: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
}

/// A finite discounted MDP whose transition kernel is sparse-linear in its features.
#[derive(Debug, Clone)]
pub struct SparseLinearMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    d: usize,
    support: Vec<usize>,
    /// `(n_states * n_actions) x d`, row-major.
    features: Vec<f64>,
    /// `s x n_states`, row-major.
    psi: Vec<f64>,
    /// `n_states x n_actions`, row-major.
    reward: Vec<f64>,
    /// `(n_states * n_actions) x n_states`, clamped to `[0, 1]`.
    transition: Vec<f64>,
}

impl SparseLinearMdp {
    pub fn new(spec: MdpSpec) -> Result<Self> {
        let MdpSpec {
            n_states,
            n_actions,
            gamma,
            d,
            support,
            features,
            psi,
            reward,
        } = spec;
        if n_states == 0 || n_actions == 0 || d == 0 {
            return Err(Error::InvalidModel(
                "n_states, n_actions and d must be positive".into(),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("gamma {gamma} not in (0, 1)")));
        }
        if support.is_empty() || support.len() > d {
            return Err(Error::InvalidModel(format!(
                "support size {} must be in [1, d={d}]",
                support.len()
            )));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) || support.iter().any(|&k| k >= d) {
            return Err(Error::InvalidModel(
                "support must be strictly increasing indices below d".into(),
            ));
        }
        let n_pairs = n_states * n_actions;
        if features.len() != n_pairs || features.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidModel(format!(
                "features must be {n_pairs} rows of length {d}"
            )));
        }
        if psi.len() != support.len() || psi.iter().any(|row| row.len() != n_states) {
            return Err(Error::InvalidModel(format!(
                "psi must be {} rows of length {n_states}",
                support.len()
            )));
        }
        if reward.len() != n_states || reward.iter().any(|row| row.len() != n_actions) {
            return Err(Error::InvalidModel(format!(
                "reward must be {n_states} rows of length {n_actions}"
            )));
        }
        let features: Vec<f64> = features.into_iter().flatten().collect();
        let psi: Vec<f64> = psi.into_iter().flatten().collect();
        let reward: Vec<f64> = reward.into_iter().flatten().collect();

        if let Some(v) = features.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + PROB_TOL) {
            return Err(Error::InvalidModel(format!(
                "feature entry {v} violates |phi| <= 1"
            )));
        }
        if let Some(r) = reward.iter().find(|r| !(**r >= 0.0 && **r <= 1.0)) {
            return Err(Error::InvalidModel(format!("reward {r} not in [0, 1]")));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("psi has non-finite entries".into()));
        }

        let mut transition = vec![0.0; n_pairs * n_states];
        for pair in 0..n_pairs {
            let phi = &features[pair * d..(pair + 1) * d];
            let mut total = 0.0;
            for xn in 0..n_states {
                let p: f64 = support
                    .iter()
                    .enumerate()
                    .map(|(row, &k)| phi[k] * psi[row * n_states + xn])
                    .sum();
                if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) {
                    return Err(Error::InvalidModel(format!(
                        "P(x'={xn} | x={}, a={}) = {p} is not a probability",
                        pair / n_actions,
                        pair % n_actions
                    )));
                }
                total += p;
                transition[pair * n_states + xn] = p.clamp(0.0, 1.0);
            }
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "transition row (x={}, a={}) sums to {total}",
                    pair / n_actions,
                    pair % n_actions
                )));
            }
        }

        Ok(Self {
            n_states,
            n_actions,
            gamma,
            d,
            support,
            features,
            psi,
            reward,
            transition,
        })
    }

    pub fn to_spec(&self) -> MdpSpec {
        MdpSpec {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            d: self.d,
            support: self.support.clone(),
            features: self.features.chunks(self.d).map(<[f64]>::to_vec).collect(),
            psi: self.psi.chunks(self.n_states).map(<[f64]>::to_vec).collect(),
            reward: self.reward.chunks(self.n_actions).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_spec())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Ambient feature dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// The relevant feature set, sorted.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn features(&self, x: usize, a: usize) -> &[f64] {
        let pair = x * self.n_actions + a;
        &self.features[pair * self.d..(pair + 1) * self.d]
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    /// `psi_k(x')` for the `row`-th support feature.
    pub fn psi(&self, row: usize, x_next: usize) -> f64 {
        self.psi[row * self.n_states + x_next]
    }

    /// The next-state distribution of `(x, a)`.
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let pair = x * self.n_actions + a;
        &self.transition[pair * self.n_states..(pair + 1) * self.n_states]
    }

    pub fn transition_prob(&self, x: usize, a: usize, x_next: usize) -> Result<f64> {
        if x >= self.n_states || a >= self.n_actions || x_next >= self.n_states {
            return invalid(format!(
                "index out of range: x={x}, a={a}, x'={x_next} for {}x{} MDP",
                self.n_states, self.n_actions
            ));
        }
        Ok(self.transition_row(x, a)[x_next])
    }

    /// The black-box view handed to learning algorithms.
    pub fn access(&self) -> ModelAccess<'_> {
        ModelAccess {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            d: self.d,
            features: &self.features,
            reward: &self.reward,
        }
    }

    /// `P^pi` as an `n_states x n_states` matrix.
    pub fn policy_transition(&self, policy: &Policy) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n_states, self.n_states);
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = policy.prob(x, a);
                if w == 0.0 {
                    continue;
                }
                for (xn, &q) in self.transition_row(x, a).iter().enumerate() {
                    p[(x, xn)] += w * q;
                }
            }
        }
        p
    }

    pub fn policy_reward(&self, policy: &Policy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |x, _| {
            (0..self.n_actions)
                .map(|a| policy.prob(x, a) * self.reward(x, a))
                .sum()
        })
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return invalid(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            ));
        }
        Ok(())
    }

    fn check_initial(&self, xi0: &InitialDistribution) -> Result<()> {
        if xi0.len() != self.n_states {
            return invalid(format!(
                "initial distribution has {} states, MDP has {}",
                xi0.len(),
                self.n_states
            ));
        }
        Ok(())
    }

    /// Solves `(I - gamma P^pi) v = r^pi` directly.
    pub fn exact_policy_value(
        &self,
        policy: &Policy,
        xi0: &InitialDistribution,
    ) -> Result<PolicyValue> {
        self.check_policy(policy)?;
        self.check_initial(xi0)?;
        let p = self.policy_transition(policy);
        let r = self.policy_reward(policy);
        let system = DMatrix::identity(self.n_states, self.n_states) - p * self.gamma;
        let values = system
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Numerical("singular Bellman system".into()))?;
        let scalar = xi0.probs().iter().zip(values.iter()).map(|(p, v)| p * v).sum();
        Ok(PolicyValue {
            values: values.iter().copied().collect(),
            scalar,
        })
    }

    /// `Q(x, a) = r(x, a) + gamma * sum_x' P(x'|x,a) v(x')`.
    pub fn q_from_values(&self, values: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.n_pairs()];
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                let ev: f64 = self
                    .transition_row(x, a)
                    .iter()
                    .zip(values)
                    .map(|(p, v)| p * v)
                    .sum();
                q[x * self.n_actions + a] = self.reward(x, a) + self.gamma * ev;
            }
        }
        q
    }

    /// Value iteration to within `tol` of `v*` in sup norm, plus the greedy policy.
    pub fn exact_optimal_value(&self, tol: f64) -> Result<OptimalValue> {
        if !(tol > 0.0) {
            return invalid(format!("tol must be positive, got {tol}"));
        }
        let stop = tol * (1.0 - self.gamma) / (2.0 * self.gamma);
        let mut v = vec![0.0; self.n_states];
        let mut iterations = 0usize;
        loop {
            let q = self.q_from_values(&v);
            let next: Vec<f64> = q
                .chunks(self.n_actions)
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let residual = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            iterations += 1;
            if residual <= stop {
                break;
            }
            if iterations > 10_000_000 {
                return Err(Error::Numerical("value iteration did not converge".into()));
            }
        }
        let q = self.q_from_values(&v);
        let actions: Vec<usize> = q.chunks(self.n_actions).map(argmax_lowest).collect();
        Ok(OptimalValue {
            values: v,
            policy: Policy::deterministic(&actions, self.n_actions)?,
            iterations,
        })
    }

    /// Discounted state-action occupancy `mu^pi` by forward propagation.
    ///
    /// The flow stops once the neglected tail `gamma^H / (1 - gamma)` drops
    /// below `tol`; the returned mass therefore sums to `1 - gamma^H`.
    pub fn occupancy_discounted(
        &self,
        policy: &Policy,
        xi0: &InitialDistribution,
        tol: f64,
    ) -> Result<OccupancyMeasure> {
        self.check_policy(policy)?;
        self.check_initial(xi0)?;
        if !(tol > 0.0) {
            return invalid(format!("tol must be positive, got {tol}"));
        }
        let p = self.policy_transition(policy);
        let mut state = DVector::from_column_slice(xi0.probs());
        let mut mass = vec![0.0; self.n_pairs()];
        let mut weight = 1.0 - self.gamma;
        let mut tail = 1.0 / (1.0 - self.gamma);
        while tail > tol {
            for x in 0..self.n_states {
                for a in 0..self.n_actions {
                    mass[x * self.n_actions + a] += weight * state[x] * policy.prob(x, a);
                }
            }
            state = p.tr_mul(&state);
            weight *= self.gamma;
            tail *= self.gamma;
        }
        Ok(OccupancyMeasure {
            n_actions: self.n_actions,
            mass,
        })
    }

    /// Per-state policy-averaged features `phi^pi(x) = sum_a pi(a|x) phi(x, a)`.
    pub fn policy_features(&self, policy: &Policy) -> DMatrix<f64> {
        policy_features(&self.access(), policy)
    }

    /// The matrix mean embedding `K^pi`: row `k in K` is `sum_x' psi_k(x') phi^pi(x')`.
    pub fn matrix_mean_embedding(&self, policy: &Policy) -> Result<EmbeddingMatrix> {
        self.check_policy(policy)?;
        let phi_pi = self.policy_features(policy);
        let mut k = DMatrix::zeros(self.d, self.d);
        for (row, &feature) in self.support.iter().enumerate() {
            for xn in 0..self.n_states {
                let w = self.psi(row, xn);
                if w == 0.0 {
                    continue;
                }
                for j in 0..self.d {
                    k[(feature, j)] += w * phi_pi[(xn, j)];
                }
            }
        }
        Ok(EmbeddingMatrix { k })
    }
}

/// Read-only model view used by the learning algorithms: features, reward and
/// discount, never the transition kernel.
#[derive(Debug, Clone, Copy)]
pub struct ModelAccess<'a> {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    d: usize,
    features: &'a [f64],
    reward: &'a [f64],
}

impl<'a> ModelAccess<'a> {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn features(&self, x: usize, a: usize) -> &'a [f64] {
        let pair = x * self.n_actions + a;
        &self.features[pair * self.d..(pair + 1) * self.d]
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    /// Upper end of the value range, `1 / (1 - gamma)`.
    pub fn value_cap(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }
}

pub(crate) fn policy_features(model: &ModelAccess<'_>, policy: &Policy) -> DMatrix<f64> {
    let d = model.dim();
    let mut out = DMatrix::zeros(model.n_states(), d);
    for x in 0..model.n_states() {
        for a in 0..model.n_actions() {
            let w = policy.prob(x, a);
            if w == 0.0 {
                continue;
            }
            for (j, v) in model.features(x, a).iter().enumerate() {
                out[(x, j)] += w * v;
            }
        }
    }
    out
}

/// Index of the largest entry; ties (within `1e-12` relative) go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        let b = values[best];
        if v > b + TIE_TOL * b.abs().max(1.0) {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a finite distribution given `u ~ U[0, 1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(*p >= 0.0)) {
        return invalid(format!("{what} has negative or NaN entries"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > PROB_TOL.max(1e-12 * row.len() as f64) {
        return invalid(format!("{what} sums to {total}"));
    }
    Ok(())
}

/// A stationary stochastic policy `pi(a | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return invalid("policy must have at least one state and action");
        }
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return invalid(format!("policy row {x} has {} actions", row.len()));
            }
            check_distribution(row, &format!("policy row {x}"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if let Some(a) = actions.iter().find(|&&a| a >= n_actions) {
            return invalid(format!("action {a} out of range for {n_actions} actions"));
        }
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states: actions.len(),
            n_actions,
            probs,
        })
    }

    /// `(1 - eps) * base + eps * uniform`.
    pub fn epsilon_greedy(base: &Policy, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return invalid(format!("epsilon {epsilon} not in [0, 1]"));
        }
        let u = 1.0 / base.n_actions as f64;
        Ok(Self {
            n_states: base.n_states,
            n_actions: base.n_actions,
            probs: base.probs.iter().map(|p| (1.0 - epsilon) * p + epsilon * u).collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.probs.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    /// The action a deterministic policy takes, if it is deterministic at `x`.
    pub fn action(&self, x: usize) -> Option<usize> {
        let row = self.row(x);
        row.iter().position(|&p| p == 1.0)
    }
}

/// A distribution over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    probs: Vec<f64>,
}

impl InitialDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("initial distribution is empty");
        }
        check_distribution(&probs, "initial distribution")?;
        Ok(Self { probs })
    }

    pub fn point_mass(n_states: usize, x: usize) -> Result<Self> {
        if x >= n_states {
            return invalid(format!("state {x} out of range for {n_states} states"));
        }
        let mut probs = vec![0.0; n_states];
        probs[x] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize) -> Self {
        Self {
            probs: vec![1.0 / n_states as f64; n_states],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `v^pi` per state together with `xi0 . v^pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub values: Vec<f64>,
    pub scalar: f64,
}

#[derive(Debug, Clone)]
pub struct OptimalValue {
    pub values: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
}

/// The `d x d` matrix mean embedding of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub k: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn row_norms(&self) -> Vec<f64> {
        self.k.row_iter().map(|r| r.norm()).collect()
    }
}

/// A distribution over state-action pairs, stored in `x * n_actions + a` order.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    n_actions: usize,
    mass: Vec<f64>,
}

impl OccupancyMeasure {
    pub(crate) fn from_mass(n_actions: usize, mass: Vec<f64>) -> Self {
        Self { n_actions, mass }
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.mass[x * self.n_actions + a]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// `E_mu[phi_j(x, a)]` for each `j` in `features`.
    pub fn feature_mean(&self, model: &ModelAccess<'_>, features: &[usize]) -> DVector<f64> {
        let mut out = DVector::zeros(features.len());
        for (pair, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let phi = model.features(pair / self.n_actions, pair % self.n_actions);
            for (i, &j) in features.iter().enumerate() {
                out[i] += m * phi[j];
            }
        }
        out
    }
}
