//! Default tuning formulas and the minimal-signal predicate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{Policy, SparseLinearMdp};

/// Upper limit on the default iteration count.
pub const MAX_DEFAULT_ITERATIONS: usize = 200;

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(())
}

/// `lambda1 = sqrt(T log(2d / delta) / N) / (1 - gamma)`.
pub fn default_lambda1(n: usize, t: usize, d: usize, gamma: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || t == 0 || d == 0 || !(gamma > 0.0 && gamma < 1.0) {
        return invalid("need N, T, d >= 1 and gamma in (0, 1)");
    }
    Ok((t as f64 * (2.0 * d as f64 / delta).ln() / n as f64).sqrt() / (1.0 - gamma))
}

/// `lambda2 = 4 sqrt(2 log(2 d^2 / delta) / (N d))`.
pub fn default_lambda2(n: usize, d: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || d == 0 {
        return invalid("need N, d >= 1");
    }
    let d = d as f64;
    Ok(4.0 * (2.0 * (2.0 * d * d / delta).ln() / (n as f64 * d)).sqrt())
}

/// `lambda3 = lambda_min(Sigma) log(12 |K_hat| / delta) L |K_hat|`.
pub fn default_lambda3(sigma_min: f64, selected: usize, delta: f64, l: usize) -> Result<f64> {
    check_delta(delta)?;
    if selected == 0 {
        return Ok(0.0);
    }
    let k = selected as f64;
    Ok(sigma_min.max(0.0) * (12.0 * k / delta).ln() * l as f64 * k)
}

/// `T = ceil(log(N / (1 - gamma)) / (1 - gamma))`, capped at
/// [`MAX_DEFAULT_ITERATIONS`]. The flag reports whether the cap applied.
pub fn default_iterations(n: usize, gamma: f64) -> Result<(usize, bool)> {
    if n == 0 || !(gamma > 0.0 && gamma < 1.0) {
        return invalid("need N >= 1 and gamma in (0, 1)");
    }
    let raw = ((n as f64 / (1.0 - gamma)).ln() / (1.0 - gamma)).ceil().max(1.0);
    if raw > MAX_DEFAULT_ITERATIONS as f64 {
        log::warn!("default iteration count {raw} capped at {MAX_DEFAULT_ITERATIONS}");
        return Ok((MAX_DEFAULT_ITERATIONS, true));
    }
    Ok((raw as usize, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalCheck {
    pub pass: bool,
    /// `min_row_norm / threshold`.
    pub ratio: f64,
    /// `min_{j in K} ||K^pi_j||_2 / sqrt(d)`.
    pub min_row_norm: f64,
    /// `(64 sqrt(2) s / c_min) sqrt(2 log(2 d^2 / delta) / N)`.
    pub threshold: f64,
}

/// Compares the weakest relevant row of the exact embedding against the
/// screening threshold for `N` samples and restricted eigenvalue `c_min`.
pub fn signal_strength_check(
    mdp: &SparseLinearMdp,
    policy: &Policy,
    n: usize,
    delta: f64,
    c_min: f64,
) -> Result<SignalCheck> {
    check_delta(delta)?;
    if n == 0 || !(c_min > 0.0) {
        return invalid("need N >= 1 and a positive restricted eigenvalue");
    }
    let emb = mdp.matrix_mean_embedding(policy)?;
    let d = mdp.dim() as f64;
    let norms = emb.row_norms();
    let min_row_norm = mdp
        .support()
        .iter()
        .map(|&j| norms[j])
        .fold(f64::INFINITY, f64::min)
        / d.sqrt();
    let s = mdp.sparsity() as f64;
    let threshold = 64.0 * 2f64.sqrt() * s / c_min
        * (2.0 * (2.0 * d * d / delta).ln() / n as f64).sqrt();
    let ratio = min_row_norm / threshold;
    Ok(SignalCheck {
        pass: ratio >= 1.0,
        ratio,
        min_row_norm,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpSpec;

    #[test]
    fn lambda1_values() {
        let l = default_lambda1(10_000, 10, 100, 0.9, 0.1).unwrap();
        assert!((l - 10.0 * (10.0 * 2000f64.ln() / 1e4).sqrt()).abs() < 1e-12);
        assert!((l - 0.8718).abs() < 1e-3);
        let l2 = default_lambda1(20_000, 10, 100, 0.9, 0.1).unwrap();
        assert!((l / l2 - 2f64.sqrt()).abs() < 1e-12);
        // N = T log(2d/delta), gamma = 0.5 gives exactly 2.
        let (t, d, delta) = (3usize, 5usize, 0.1);
        let n_real = t as f64 * (2.0 * d as f64 / delta).ln();
        let direct = (t as f64 * (2.0 * d as f64 / delta).ln() / n_real).sqrt() / 0.5;
        assert!((direct - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda2_values() {
        let l = default_lambda2(10_000, 10, 0.05).unwrap();
        assert!((l - 0.0515).abs() < 1e-4);
        let q = default_lambda2(40_000, 10, 0.05).unwrap();
        assert!((l / q - 2.0).abs() < 1e-12);
        assert!(default_lambda2(1, 1, 0.9).unwrap() > 0.0);
    }

    #[test]
    fn iterations_cap() {
        assert_eq!(default_iterations(1000, 0.5).unwrap(), (((2000f64).ln() / 0.5).ceil() as usize, false));
        assert_eq!(default_iterations(1000, 0.999).unwrap(), (MAX_DEFAULT_ITERATIONS, true));
    }

    fn single_feature(d: usize, row_weight: f64) -> SparseLinearMdp {
        // One state, one action, phi_0 = 1 carries the transition; the other
        // features are zero.
        let mut phi = vec![0.0; d];
        phi[0] = 1.0;
        SparseLinearMdp::new(MdpSpec {
            n_states: 1,
            n_actions: 1,
            gamma: 0.5,
            d,
            support: vec![0],
            features: vec![phi],
            psi: vec![vec![row_weight]],
            reward: vec![vec![1.0]],
        })
        .unwrap()
    }

    #[test]
    fn strong_signal_passes_with_margin() {
        let mdp = single_feature(1, 1.0);
        let check = signal_strength_check(&mdp, &Policy::uniform(1, 1), 100_000, 0.5, 1.0).unwrap();
        assert!(check.pass);
        assert!(check.ratio > 2.0, "{check:?}");
    }

    #[test]
    fn threshold_vanishes_with_n() {
        let mdp = single_feature(4, 1.0);
        let small = signal_strength_check(&mdp, &Policy::uniform(1, 1), 100, 0.1, 1.0).unwrap();
        let huge = signal_strength_check(&mdp, &Policy::uniform(1, 1), usize::MAX / 2, 0.1, 1.0).unwrap();
        assert!(!small.pass);
        assert!(huge.pass);
    }

    #[test]
    fn zero_row_fails_with_zero_ratio() {
        // psi_0 sums to zero and phi^pi is the same at both states, so row 0 of
        // the embedding vanishes.
        let mdp = SparseLinearMdp::new(MdpSpec {
            n_states: 2,
            n_actions: 1,
            gamma: 0.5,
            d: 2,
            support: vec![0, 1],
            features: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            psi: vec![vec![0.5, -0.5], vec![0.5, 0.5]],
            reward: vec![vec![0.0], vec![0.0]],
        })
        .unwrap();
        let check = signal_strength_check(&mdp, &Policy::uniform(2, 1), 1000, 0.1, 1.0).unwrap();
        assert!(!check.pass);
        assert_eq!(check.ratio, 0.0);
    }
}
