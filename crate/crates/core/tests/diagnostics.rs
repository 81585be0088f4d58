use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sbrl_core::diagnostics::{
    audit, chi_square_with_covariance, divergence_series, restricted_chi_square, AuditInput,
    MismatchReport,
};
use sbrl_core::generate::{generate_instance, GeneratorSpec};
use sbrl_core::solvers::RestrictedEigenvalueOptions;
use sbrl_core::{
    population_covariance, CovarianceKind, CovarianceMatrix, Error, InitialDistribution, MdpSpec,
    Policy, SparseLinearMdp,
};

/// One state, three actions, a constant first feature.
fn one_state() -> SparseLinearMdp {
    SparseLinearMdp::new(MdpSpec {
        n_states: 1,
        n_actions: 3,
        gamma: 0.9,
        d: 2,
        support: vec![0],
        features: vec![vec![1.0, -0.5], vec![1.0, 0.2], vec![1.0, 0.9]],
        psi: vec![vec![1.0]],
        reward: vec![vec![0.1, 0.5, 1.0]],
    })
    .unwrap()
}

/// Step-averaged behavior covariance by explicit marginal propagation.
fn brute_covariance(mdp: &SparseLinearMdp, behavior: &Policy, init: &InitialDistribution, l: usize) -> DMatrix<f64> {
    let (ns, na, d) = (mdp.n_states(), mdp.n_actions(), mdp.dim());
    let mut rho = init.probs().to_vec();
    let mut sigma = DMatrix::zeros(d, d);
    for _ in 0..l {
        let mut next = vec![0.0; ns];
        for x in 0..ns {
            for a in 0..na {
                let w = rho[x] * behavior.prob(x, a);
                let phi = DVector::from_column_slice(mdp.features(x, a));
                sigma += &phi * phi.transpose() * (w / l as f64);
                for (xn, p) in mdp.transition_row(x, a).iter().enumerate() {
                    next[xn] += w * p;
                }
            }
        }
        rho = next;
    }
    sigma
}

/// Discounted target feature mean by long forward propagation.
fn brute_nu(mdp: &SparseLinearMdp, target: &Policy, xi0: &InitialDistribution, horizon: usize) -> DVector<f64> {
    let (ns, na, d, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.dim(), mdp.gamma());
    let mut rho = xi0.probs().to_vec();
    let mut nu = DVector::zeros(d);
    let mut weight = 1.0 - gamma;
    for _ in 0..horizon {
        let mut next = vec![0.0; ns];
        for x in 0..ns {
            for a in 0..na {
                let w = rho[x] * target.prob(x, a);
                nu += DVector::from_column_slice(mdp.features(x, a)) * (w * weight);
                for (xn, p) in mdp.transition_row(x, a).iter().enumerate() {
                    next[xn] += w * p;
                }
            }
        }
        rho = next;
        weight *= gamma;
    }
    nu
}

fn ratio(nu: &DVector<f64>, sigma: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    nu.dot(w).powi(2) / w.dot(&(sigma * w))
}

/// Maximizes `(nu.w)^2 / w'Sigma w` over the unit sphere in three dimensions:
/// a Fibonacci grid followed by a shrinking pattern search in angles.
fn sphere_search(nu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let point = |theta: f64, phi: f64| {
        DVector::from_vec(vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()])
    };
    let n = 40_000;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let (theta, phi) = (z.acos(), golden * i as f64);
        let r = ratio(nu, sigma, &point(theta, phi));
        if r > best.0 {
            best = (r, theta, phi);
        }
    }
    let mut step = 0.05;
    while step > 1e-10 {
        let mut moved = false;
        for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let r = ratio(nu, sigma, &point(best.1 + dt, best.2 + dp));
            if r > best.0 {
                best = (r, best.1 + dt, best.2 + dp);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best.0
}

#[test]
fn matched_distributions_give_zero() {
    let mdp = one_state();
    let pi = Policy::new(vec![vec![0.2, 0.5, 0.3]]).unwrap();
    let xi0 = InitialDistribution::uniform(1);
    let chi = restricted_chi_square(&mdp, &pi, &xi0, &pi, &xi0, 3, &[0, 1]).unwrap();
    assert!(chi.abs() < 1e-12, "chi = {chi}");
}

#[test]
fn chi_square_matches_sphere_search() {
    for seed in 0..5 {
        let mdp = generate_instance(&GeneratorSpec::new(5, 3, 3, 3, 0.8, seed)).unwrap();
        let behavior = Policy::uniform(5, 3);
        let target = mdp.exact_optimal_value(1e-12).unwrap().policy;
        let xi0 = InitialDistribution::point_mass(5, 0).unwrap();
        let init = InitialDistribution::uniform(5);
        let chi = restricted_chi_square(&mdp, &target, &xi0, &behavior, &init, 4, &[0, 1, 2]).unwrap();
        let sigma = brute_covariance(&mdp, &behavior, &init, 4);
        let nu = brute_nu(&mdp, &target, &xi0, 400);
        let oracle = sphere_search(&nu, &sigma) - 1.0;
        assert!((chi - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()), "seed {seed}: {chi} vs {oracle}");
        assert!(chi >= -1e-12, "constant function is in the span");
    }
}

#[test]
fn chi_square_grows_with_feature_set() {
    for seed in 0..10 {
        let mdp = generate_instance(&GeneratorSpec::new(8, 4, 6, 3, 0.9, seed)).unwrap();
        let behavior = Policy::uniform(8, 4);
        let target = mdp.exact_optimal_value(1e-12).unwrap().policy;
        let xi0 = InitialDistribution::uniform(8);
        let mut prev = -1.0;
        for k in 1..=6 {
            let feats: Vec<usize> = (0..k).collect();
            let chi = restricted_chi_square(&mdp, &target, &xi0, &behavior, &xi0, 5, &feats).unwrap();
            assert!(chi >= -1.0 - 1e-12);
            assert!(prev <= chi + 1e-8, "seed {seed}: {prev} > {chi} at k={k}");
            prev = chi;
        }
    }
}

#[test]
fn singular_covariance_names_features() {
    let mdp = SparseLinearMdp::new(MdpSpec {
        n_states: 1,
        n_actions: 2,
        gamma: 0.5,
        d: 3,
        support: vec![0],
        features: vec![vec![1.0, 0.3, 0.3], vec![1.0, -0.4, -0.4]],
        psi: vec![vec![1.0]],
        reward: vec![vec![0.0, 1.0]],
    })
    .unwrap();
    let pi = Policy::uniform(1, 2);
    let xi0 = InitialDistribution::uniform(1);
    match restricted_chi_square(&mdp, &pi, &xi0, &pi, &xi0, 1, &[0, 1, 2]) {
        Err(Error::SingularCovariance { features, .. }) => {
            assert!(features.contains(&1) && features.contains(&2));
        }
        other => panic!("expected singular covariance, got {other:?}"),
    }
}

#[test]
fn series_on_single_pair_is_one() {
    let mdp = SparseLinearMdp::new(MdpSpec {
        n_states: 1,
        n_actions: 1,
        gamma: 0.7,
        d: 1,
        support: vec![0],
        features: vec![vec![1.0]],
        psi: vec![vec![1.0]],
        reward: vec![vec![1.0]],
    })
    .unwrap();
    let sigma = CovarianceMatrix {
        sigma: DMatrix::identity(1, 1),
        kind: CovarianceKind::Population,
    };
    let pi = Policy::uniform(1, 1);
    let xi0 = InitialDistribution::uniform(1);
    let s = divergence_series(&mdp, &pi, &xi0, &sigma, &[0], 1e-12).unwrap();
    assert!((s.value - 1.0).abs() <= 1e-12);
    let chi = chi_square_with_covariance(&mdp, &pi, &xi0, &sigma, &[0]).unwrap();
    assert!(chi.abs() < 1e-12);
}

#[test]
fn series_truncation_contract() {
    let mdp = generate_instance(&GeneratorSpec::new(6, 3, 5, 2, 0.9, 3)).unwrap();
    let behavior = Policy::uniform(6, 3);
    let target = mdp.exact_optimal_value(1e-12).unwrap().policy;
    let xi0 = InitialDistribution::uniform(6);
    let sigma = population_covariance(&mdp, &behavior, &xi0, 4).unwrap();
    for tol in [1e-2, 1e-4, 1e-8] {
        let a = divergence_series(&mdp, &target, &xi0, &sigma, &[0, 1, 2], tol).unwrap();
        let b = divergence_series(&mdp, &target, &xi0, &sigma, &[0, 1, 2], tol / 2.0).unwrap();
        assert!(b.terms >= a.terms);
        assert!((a.value - b.value).abs() <= tol);
        assert!(a.tail_bound / (1.0 - mdp.gamma()) <= tol);
    }
}

#[test]
fn audit_matched_policy_and_roundtrip() {
    let mdp = one_state();
    let pi = Policy::new(vec![vec![0.2, 0.5, 0.3]]).unwrap();
    let xi0 = InitialDistribution::uniform(1);
    let report = audit(&AuditInput {
        mdp: &mdp,
        behavior: &pi,
        target: &pi,
        xi0: &xi0,
        data_init: &xi0,
        episode_len: 2,
        n: 10_000,
        delta: 0.1,
        features: Some(&[0, 1]),
        horizon_tol: 1e-10,
        re_options: RestrictedEigenvalueOptions::default(),
    })
    .unwrap();
    assert!(report.chi_square.abs() < 1e-12);
    assert!((report.series_value - 1.0).abs() < 1e-9);
    assert!(report.c_min.lower <= report.c_min.upper);
    let text = serde_json::to_string(&report).unwrap();
    let back: MismatchReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Each term is a sup over the class at one step, so the sum dominates the
    // sup of the discounted average.
    #[test]
    fn series_dominates_chi_square(seed in 0u64..1000, eps in 0.0f64..1.0, l in 1usize..6) {
        let mdp = generate_instance(&GeneratorSpec::new(5, 3, 6, 3, 0.85, seed)).unwrap();
        let opt = mdp.exact_optimal_value(1e-12).unwrap().policy;
        let behavior = Policy::epsilon_greedy(&opt, 1.0).unwrap();
        let target = Policy::epsilon_greedy(&opt, eps).unwrap();
        let xi0 = InitialDistribution::uniform(5);
        let sigma = population_covariance(&mdp, &behavior, &xi0, l).unwrap();
        let feats = mdp.support().to_vec();
        let chi = chi_square_with_covariance(&mdp, &target, &xi0, &sigma, &feats).unwrap();
        let series = divergence_series(&mdp, &target, &xi0, &sigma, &feats, 1e-10).unwrap();
        prop_assert!(chi >= -1.0 - 1e-12);
        prop_assert!(series.value >= 0.0);
        prop_assert!(series.value + 1e-9 >= (1.0 + chi).max(0.0).sqrt());
    }
}
