use proptest::prelude::*;
use sbrl_core::generate::{generate_instance, GeneratorSpec};
use sbrl_core::ope::{
    fitted_ridge_evaluation, lasso_fqe, monte_carlo_value, policy_state_values, post_selection_fqe,
    q_table, ridge_fqe_baseline, OpeConfig,
};
use sbrl_core::{collect, split_folds, InitialDistribution, MdpSpec, Policy, SparseLinearMdp};

fn config(iterations: usize, lambda1: f64, lambda3: Option<f64>) -> OpeConfig {
    OpeConfig {
        iterations,
        monte_carlo: None,
        lambda1,
        lambda2: 0.01,
        lambda3,
        delta: 0.1,
        tol: 1e-10,
        max_iter: 10_000,
        seed: 99,
    }
}

fn single_state(gamma: f64) -> SparseLinearMdp {
    SparseLinearMdp::new(MdpSpec {
        n_states: 1,
        n_actions: 1,
        gamma,
        d: 1,
        support: vec![0],
        features: vec![vec![1.0]],
        psi: vec![vec![1.0]],
        reward: vec![vec![1.0]],
    })
    .unwrap()
}

fn zero_reward(mdp: &SparseLinearMdp) -> SparseLinearMdp {
    let mut spec = mdp.to_spec();
    for row in &mut spec.reward {
        row.iter_mut().for_each(|r| *r = 0.0);
    }
    SparseLinearMdp::new(spec).unwrap()
}

/// Three states, deterministic moves: coordinate 0 sends to state 1, coordinate 2
/// to state 2; coordinates 1 and 3 are irrelevant noise.
fn deterministic_chain() -> SparseLinearMdp {
    let noise = [0.3, -0.7, 0.5, 0.9, -0.2, 0.1];
    let mut features = Vec::new();
    for x in 0..3 {
        for a in 0..2 {
            let pair = x * 2 + a;
            let hit = (x + a) % 2 == 0;
            let (f0, f2) = if hit { (1.0, 0.0) } else { (0.0, 1.0) };
            features.push(vec![f0, noise[pair], f2, -noise[5 - pair]]);
        }
    }
    SparseLinearMdp::new(MdpSpec {
        n_states: 3,
        n_actions: 2,
        gamma: 0.8,
        d: 4,
        support: vec![0, 2],
        features,
        psi: vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        reward: vec![vec![0.2, 0.9], vec![0.5, 0.1], vec![1.0, 0.0]],
    })
    .unwrap()
}

#[test]
fn zero_rewards_give_zero_estimates() {
    let base = generate_instance(&GeneratorSpec::new(4, 3, 10, 3, 0.9, 5)).unwrap();
    let mdp = zero_reward(&base);
    let pi = Policy::uniform(4, 3);
    let xi0 = InitialDistribution::uniform(4);
    let ds = collect(&mdp, &[pi.clone()], &xi0, 40, 5, 1, "uniform").unwrap();
    let folds = split_folds(&ds, 10).unwrap();
    let cfg = config(10, 0.01, None);
    let res = lasso_fqe(&ds, &folds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    assert_eq!(res.value, 0.0);
    assert!(res.weights.iter().flatten().all(|w| *w == 0.0));
    let post = post_selection_fqe(&ds, &mdp.access(), &pi, &xi0, &config(10, 0.01, Some(0.1))).unwrap();
    assert_eq!(post.value, 0.0);
}

#[test]
fn single_state_value_is_recovered() {
    let mdp = single_state(0.5);
    let pi = Policy::uniform(1, 1);
    let xi0 = InitialDistribution::uniform(1);
    let ds = collect(&mdp, &[pi.clone()], &xi0, 600, 10, 3, "only").unwrap();
    let folds = split_folds(&ds, 60).unwrap();
    let res = lasso_fqe(&ds, &folds, &mdp.access(), &pi, &xi0, &config(60, 1e-6, None)).unwrap();
    assert!((1.99..=2.0).contains(&res.value), "v_hat = {}", res.value);
}

#[test]
fn two_state_lasso_fqe_error_is_small() {
    // d = s = 2: features are mixing weights over two anchor distributions.
    let gamma = 0.9;
    let mdp = SparseLinearMdp::new(MdpSpec {
        n_states: 2,
        n_actions: 2,
        gamma,
        d: 2,
        support: vec![0, 1],
        features: vec![vec![0.8, 0.2], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.1, 0.9]],
        psi: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        reward: vec![vec![1.0, 0.4], vec![0.0, 0.6]],
    })
    .unwrap();
    let behavior = Policy::uniform(2, 2);
    let target = Policy::deterministic(&[0, 1], 2).unwrap();
    let xi0 = InitialDistribution::uniform(2);
    let truth = mdp.exact_policy_value(&target, &xi0).unwrap().scalar;
    let n = 40_000;
    let mut errors: Vec<f64> = (0..20)
        .map(|seed| {
            let ds = collect(&mdp, &[behavior.clone()], &xi0, n / 10, 10, seed, "uniform").unwrap();
            let mut cfg = OpeConfig::defaults(n, 2, gamma, 0.1, seed).unwrap();
            // The formula's constant swamps the data at this N; same scale as the sweeps.
            cfg.lambda1 *= 0.01;
            let folds = split_folds(&ds, cfg.iterations).unwrap();
            let res = lasso_fqe(&ds, &folds, &mdp.access(), &target, &xi0, &cfg).unwrap();
            (res.value - truth).abs()
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[9] + errors[10]);
    assert!(median <= 0.05 / (1.0 - gamma), "median error {median}");
}

#[test]
fn monte_carlo_constant_and_clipped() {
    let gamma = 0.75;
    let mdp = generate_instance(&GeneratorSpec::new(3, 2, 4, 2, gamma, 8)).unwrap();
    let model = mdp.access();
    let pi = Policy::uniform(3, 2);
    let xi0 = InitialDistribution::uniform(3);
    let (est, se) = monte_carlo_value(&model, &[1.5; 6], &pi, &xi0, 500, 1).unwrap();
    assert_eq!((est, se), (1.5, 0.0));
    let high = 2.0 / (1.0 - gamma);
    let (est, se) = monte_carlo_value(&model, &[high; 6], &pi, &xi0, 500, 1).unwrap();
    assert_eq!((est, se), (1.0 / (1.0 - gamma), 0.0));
    assert!(monte_carlo_value(&model, &[1.0; 6], &pi, &xi0, 0, 1).is_err());
}

#[test]
fn monte_carlo_point_mass_deterministic_policy() {
    let mdp = generate_instance(&GeneratorSpec::new(3, 2, 4, 2, 0.9, 8)).unwrap();
    let model = mdp.access();
    let q = [0.1, 2.5, 3.0, -1.0, 40.0, 7.0];
    let pi = Policy::deterministic(&[1, 0, 0], 2).unwrap();
    for (x, expect) in [(0, 2.5), (1, 3.0), (2, 10.0)] {
        let xi0 = InitialDistribution::point_mass(3, x).unwrap();
        for m in [1, 7, 100] {
            let (est, _) = monte_carlo_value(&model, &q, &pi, &xi0, m, 4).unwrap();
            assert!((est - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_backup_contracts() {
    // Replace the regression with the exact backup w_t[k] = sum_x' clip(V_{t-1})(x') psi_k(x').
    let mdp = generate_instance(&GeneratorSpec::new(6, 3, 12, 3, 0.85, 21)).unwrap();
    let model = mdp.access();
    let gamma = mdp.gamma();
    let cap = 1.0 / (1.0 - gamma);
    let pi = Policy::epsilon_greedy(&Policy::deterministic(&[0, 1, 2, 0, 1, 2], 3).unwrap(), 0.3).unwrap();
    let xi0 = InitialDistribution::uniform(6);
    let truth = mdp.exact_policy_value(&pi, &xi0).unwrap().values;
    let all: Vec<usize> = (0..mdp.dim()).collect();
    let mut w = vec![0.0; mdp.dim()];
    for t in 1..=40 {
        let v = policy_state_values(&model, &pi, &q_table(&model, &w, &all));
        let mut next = vec![0.0; mdp.dim()];
        for (row, &k) in mdp.support().iter().enumerate() {
            next[k] = (0..6).map(|x| v[x].clamp(0.0, cap) * mdp.psi(row, x)).sum();
        }
        w = next;
        let v = policy_state_values(&model, &pi, &q_table(&model, &w, &all));
        let gap = (0..6).map(|x| (v[x] - truth[x]).abs()).fold(0.0, f64::max);
        assert!(gap <= 2.0 * gamma.powi(t) / (1.0 - gamma) + 1e-12, "t={t} gap={gap}");
    }
}

#[test]
fn forced_support_ridge_recovers_value_on_deterministic_mdp() {
    let mdp = deterministic_chain();
    let behavior = Policy::uniform(3, 2);
    let target = Policy::deterministic(&[1, 0, 0], 2).unwrap();
    let data_init = InitialDistribution::uniform(3);
    let ds = collect(&mdp, &[behavior], &data_init, 50, 6, 12, "uniform").unwrap();
    let cfg = config(200, 0.0, Some(0.0));
    for x0 in 0..3 {
        let xi0 = InitialDistribution::point_mass(3, x0).unwrap();
        let truth = mdp.exact_policy_value(&target, &xi0).unwrap().scalar;
        let res = fitted_ridge_evaluation(&ds, &mdp.access(), &target, &xi0, &cfg, &[0, 2]).unwrap();
        assert!((res.value - truth).abs() <= 1e-6, "x0={x0}: {} vs {truth}", res.value);
        assert!(!res.min_norm);
    }
}

#[test]
fn empty_selection_takes_reward_only_path() {
    let mdp = deterministic_chain();
    let pi = Policy::uniform(3, 2);
    let xi0 = InitialDistribution::point_mass(3, 0).unwrap();
    let ds = collect(&mdp, &[pi.clone()], &xi0, 20, 4, 2, "uniform").unwrap();
    let res = fitted_ridge_evaluation(&ds, &mdp.access(), &pi, &xi0, &config(5, 0.0, Some(0.0)), &[]).unwrap();
    assert!(res.degenerate);
    let mut huge = config(5, 0.0, Some(0.0));
    huge.lambda2 = 1e6;
    let post = post_selection_fqe(&ds, &mdp.access(), &pi, &xi0, &huge).unwrap();
    assert!(post.degenerate);
    assert_eq!(post.selected, Some(vec![]));
    assert!(post.value >= 0.2 && post.value <= 0.9);
}

#[test]
fn fold_mismatch_is_rejected() {
    let mdp = deterministic_chain();
    let pi = Policy::uniform(3, 2);
    let xi0 = InitialDistribution::uniform(3);
    let ds = collect(&mdp, &[pi.clone()], &xi0, 20, 4, 2, "uniform").unwrap();
    let folds = split_folds(&ds, 4).unwrap();
    assert!(lasso_fqe(&ds, &folds, &mdp.access(), &pi, &xi0, &config(5, 0.1, None)).is_err());
}

#[test]
fn runs_are_deterministic() {
    let mdp = generate_instance(&GeneratorSpec::new(5, 3, 16, 3, 0.9, 2)).unwrap();
    let pi = Policy::uniform(5, 3);
    let xi0 = InitialDistribution::uniform(5);
    let ds = collect(&mdp, &[pi.clone()], &xi0, 60, 5, 7, "uniform").unwrap();
    let folds = split_folds(&ds, 12).unwrap();
    let cfg = config(12, 0.05, Some(0.01));
    let a = lasso_fqe(&ds, &folds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    let b = lasso_fqe(&ds, &folds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    assert_eq!(a, b);
    let a = post_selection_fqe(&ds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    let b = post_selection_fqe(&ds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    assert_eq!(a, b);
    let a = ridge_fqe_baseline(&ds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    let b = ridge_fqe_baseline(&ds, &mdp.access(), &pi, &xi0, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_stay_in_value_range(seed in 0u64..1000, lambda1 in 0.0f64..0.5) {
        let mdp = generate_instance(&GeneratorSpec::new(4, 2, 8, 2, 0.8, seed)).unwrap();
        let pi = Policy::uniform(4, 2);
        let xi0 = InitialDistribution::uniform(4);
        let ds = collect(&mdp, &[pi.clone()], &xi0, 24, 4, seed, "uniform").unwrap();
        let folds = split_folds(&ds, 6).unwrap();
        let cfg = config(6, lambda1, Some(0.01));
        let cap = 1.0 / (1.0 - mdp.gamma());
        for res in [
            lasso_fqe(&ds, &folds, &mdp.access(), &pi, &xi0, &cfg).unwrap(),
            post_selection_fqe(&ds, &mdp.access(), &pi, &xi0, &cfg).unwrap(),
        ] {
            prop_assert!(res.value >= 0.0 && res.value <= cap);
        }
    }
}
