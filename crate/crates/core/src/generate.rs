//! Random sparse linear MDPs.
//!
//! The kernel is built first and then factored: `s` anchor distributions
//! `psi_k` over next states and, for every state-action pair, simplex weights
//! on the relevant coordinates. `P(. | x, a)` is then a convex combination of
//! the anchors and is a valid distribution by construction. The remaining
//! `d - s` coordinates are bounded noise that never touches `P`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{MdpSpec, SparseLinearMdp};
use crate::rng::{stream_rng, GENERATOR_STREAM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub s: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Dirichlet concentration of the relevant feature weights.
    #[serde(default = "default_concentration")]
    pub feature_concentration: f64,
    /// Dirichlet concentration of the anchor distributions.
    #[serde(default = "default_concentration")]
    pub psi_concentration: f64,
    /// Irrelevant features are uniform on `[-noise_scale, noise_scale]`.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    /// Use the first `s` coordinates as the support instead of a random subset.
    #[serde(default)]
    pub leading_support: bool,
}

fn default_concentration() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn new(n_states: usize, n_actions: usize, d: usize, s: usize, gamma: f64, seed: u64) -> Self {
        Self {
            n_states,
            n_actions,
            d,
            s,
            gamma,
            seed,
            feature_concentration: default_concentration(),
            psi_concentration: default_concentration(),
            noise_scale: default_noise(),
            leading_support: false,
        }
    }
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, n: usize) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|v| v / total).collect();
        }
    }
}

pub fn generate_instance(spec: &GeneratorSpec) -> Result<SparseLinearMdp> {
    let GeneratorSpec {
        n_states,
        n_actions,
        d,
        s,
        gamma,
        seed,
        feature_concentration,
        psi_concentration,
        noise_scale,
        leading_support,
    } = *spec;
    if s == 0 || s > d {
        return invalid(format!("need 1 <= s <= d, got s = {s}, d = {d}"));
    }
    if n_states == 0 || n_actions == 0 {
        return invalid("need at least one state and one action");
    }
    if !(feature_concentration > 0.0 && psi_concentration > 0.0) {
        return invalid("Dirichlet concentrations must be positive");
    }
    if !(0.0..=1.0).contains(&noise_scale) {
        return invalid("noise scale must lie in [0, 1]");
    }
    let mut rng = stream_rng(seed, GENERATOR_STREAM);
    let mut support: Vec<usize> = if leading_support {
        (0..s).collect()
    } else {
        sample(&mut rng, d, s).into_vec()
    };
    support.sort_unstable();
    let psi: Vec<Vec<f64>> = (0..s)
        .map(|_| dirichlet(&mut rng, psi_concentration, n_states))
        .collect();
    let mut features = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states * n_actions {
        let weights = dirichlet(&mut rng, feature_concentration, s);
        let mut phi: Vec<f64> = (0..d)
            .map(|_| noise_scale * rng.random_range(-1.0..=1.0))
            .collect();
        for (w, &j) in weights.into_iter().zip(&support) {
            phi[j] = w;
        }
        features.push(phi);
    }
    let reward: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random_range(0.0..=1.0)).collect())
        .collect();
    SparseLinearMdp::new(MdpSpec {
        n_states,
        n_actions,
        gamma,
        d,
        support,
        features,
        psi,
        reward,
    })
}

/// Sylvester Hadamard matrix of order `n` (a power of two), entries `+-1`.
pub fn hadamard(n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || !n.is_power_of_two() {
        return invalid(format!("Hadamard order must be a power of two, got {n}"));
    }
    let mut h = vec![vec![1.0]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0.0; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                next[i][j] = h[i][j];
                next[i][j + m] = h[i][j];
                next[i + m][j] = h[i][j];
                next[i + m][j + m] = -h[i][j];
            }
        }
        h = next;
    }
    Ok(h)
}

/// A single-relevant-feature instance with identity data covariance.
///
/// Action `a` has features equal to row `a` of the order-`d` Hadamard matrix
/// at every state, so the first coordinate is constantly one and uniform
/// behavior gives `Sigma = I`. Only that constant coordinate drives the
/// kernel: `P(. | x, a) = psi_0` for every pair. Rewards are uniform on `[0, 1]`.
pub fn strong_signal_instance(n_states: usize, d: usize, gamma: f64, seed: u64) -> Result<SparseLinearMdp> {
    let h = hadamard(d)?;
    let mut rng = stream_rng(seed, GENERATOR_STREAM);
    let psi = vec![dirichlet(&mut rng, 1.0, n_states)];
    let features = (0..n_states).flat_map(|_| h.iter().cloned()).collect();
    let reward = (0..n_states)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..=1.0)).collect())
        .collect();
    SparseLinearMdp::new(MdpSpec {
        n_states,
        n_actions: d,
        gamma,
        d,
        support: vec![0],
        features,
        psi,
        reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_instances_are_valid() {
        for seed in 0..100 {
            let spec = GeneratorSpec::new(5, 4, 32, 3, 0.9, seed);
            let mdp = generate_instance(&spec).unwrap();
            assert_eq!(mdp.sparsity(), 3);
            assert_eq!(mdp.to_json().unwrap(), SparseLinearMdp::from_json(&mdp.to_json().unwrap()).unwrap().to_json().unwrap());
        }
        assert!(generate_instance(&GeneratorSpec::new(5, 4, 2, 3, 0.9, 0)).is_err());
    }

    #[test]
    fn hadamard_rows_are_orthogonal() {
        let h = hadamard(8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..8).map(|k| h[i][k] * h[j][k]).sum();
                assert_eq!(dot, if i == j { 8.0 } else { 0.0 });
            }
        }
        assert!(hadamard(6).is_err());
    }

    #[test]
    fn strong_signal_covariance_is_identity() {
        use crate::data::population_covariance;
        use crate::mdp::{InitialDistribution, Policy};
        let mdp = strong_signal_instance(4, 8, 0.9, 1).unwrap();
        let sigma = population_covariance(&mdp, &Policy::uniform(4, 8), &InitialDistribution::uniform(4), 3).unwrap();
        assert!((sigma.sigma - nalgebra::DMatrix::identity(8, 8)).amax() < 1e-12);
    }
}
