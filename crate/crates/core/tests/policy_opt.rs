mod common;

use common::*;
use conflation_core::canonical::{self, CanonicalParams, MOVE, STAY};
use conflation_core::chain::{analyze_chain, average_reward, poisson_residual};
use conflation_core::optimize::{assert_unique_optimal, optimize, optimize_with, OptimizeOptions};
use conflation_core::{Error, Mdp, Policy, RewardFunction};
use rand::Rng;

/// Gains of every deterministic policy from the hand-built chain and Cesaro oracle.
fn oracle_gains(mdp: &Mdp, r: &[f64]) -> Vec<(Vec<usize>, f64)> {
    all_policies(mdp.n_states(), mdp.n_actions())
        .into_iter()
        .map(|actions| {
            let phi = power_cesaro(&det_chain(mdp, &actions), mdp.initial_state(), 20_000);
            let gain = phi.iter().zip(r).map(|(p, x)| p * x).sum();
            (actions, gain)
        })
        .collect()
}

#[test]
fn canonical_optimum() {
    let (mdp, r) = canonical::build(CanonicalParams::new(20.0, 1.0 / 15.0).unwrap()).unwrap();
    let opt = optimize(&mdp, &r).unwrap();
    assert!((opt.optimal_gain - 19.0 / 17.0).abs() < 1e-14);
    assert_eq!(opt.optimal_actions[..2], [MOVE, MOVE]);
    // Both terminal actions lead back to the common state.
    assert_eq!(opt.all_optimal_policies, vec![vec![MOVE, MOVE, MOVE], vec![MOVE, MOVE, STAY]]);
    assert!(!assert_unique_optimal(&opt));
    let restricted = canonical::optimize_restricted(&mdp, &r).unwrap();
    assert!(assert_unique_optimal(&restricted));

    let best_oracle = oracle_gains(&mdp, r.values()).into_iter().map(|(_, g)| g).fold(f64::NEG_INFINITY, f64::max);
    assert!((best_oracle - opt.optimal_gain).abs() < 1e-3);
}

#[test]
fn proxy_value_reward_selects_instrumental_policy() {
    let params = CanonicalParams::new(20.0, 1.0 / 15.0).unwrap();
    let (mdp, r, _, v) = canonical::optimal_value(params).unwrap();
    for shift in [0.0, -v[0], 12.5] {
        let r_hat = RewardFunction::new(v.iter().map(|x| x + shift).collect()).unwrap();
        let proxy = optimize(&mdp, &r_hat).unwrap();
        assert_eq!(proxy.optimal_actions[..2], [MOVE, STAY]);
        // Enumerate all eight policies under r_hat by hand and check the winner.
        let gains = oracle_gains(&mdp, r_hat.values());
        let best = gains.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
        for (actions, g) in &gains {
            if (g - best).abs() < 1e-3 {
                assert_eq!(actions[..2], [MOVE, STAY]);
            }
        }
        let true_gain = average_reward(&mdp, &r, &proxy.optimal_policy).unwrap();
        assert_eq!(true_gain, -1.0);
    }
}

#[test]
fn single_action_mdp() {
    let mut rng = rng(11);
    let mdp = random_mdp(&mut rng, 4, 1, 0.0);
    let r = RewardFunction::new(random_vector(&mut rng, 4, 3.0)).unwrap();
    let opt = optimize(&mdp, &r).unwrap();
    assert_eq!(opt.all_optimal_policies, vec![vec![0; 4]]);
    assert!(opt.is_unique && assert_unique_optimal(&opt));
    let (gain, _) = poisson_oracle(&det_chain(&mdp, &[0; 4]), r.values());
    assert!((opt.optimal_gain - gain).abs() < 1e-12);
}

#[test]
fn duplicated_actions_and_constant_rewards_tie() {
    let mut rng = rng(12);
    let base = random_mdp(&mut rng, 3, 1, 0.0);
    let twin = Mdp::new(vec![base.transitions()[0].clone(), base.transitions()[0].clone()], 0).unwrap();
    let r = RewardFunction::new(vec![1.0, 2.0, 3.0]).unwrap();
    assert!(!assert_unique_optimal(&optimize(&twin, &r).unwrap()));

    let mdp = random_mdp(&mut rng, 3, 2, 0.3);
    let opt = optimize(&mdp, &RewardFunction::constant(3, 2.0)).unwrap();
    assert!(!assert_unique_optimal(&opt));
    assert_eq!(opt.all_optimal_policies.len(), 8);
    assert_eq!(opt.optimal_actions, vec![0, 0, 0]);
}

#[test]
fn enumeration_cap() {
    let mdp = Mdp::new(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3], 0).unwrap();
    let r = RewardFunction::new(vec![0.0, 1.0]).unwrap();
    let err = optimize_with(&mdp, &r, &OptimizeOptions { cap: 9, ..Default::default() }).unwrap();
    assert_eq!(err.all_optimal_policies.len(), 9);
    let err = optimize_with(&mdp, &r, &OptimizeOptions { cap: 5, ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Capacity { count: 9, cap: 5 }));
}

#[test]
fn optimum_dominates_every_policy_and_solves_poisson() {
    let mut rng = rng(13);
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let k = rng.random_range(1..=3);
        let mdp = random_mdp(&mut rng, n, k, 0.4);
        let r = RewardFunction::new(random_vector(&mut rng, n, 5.0)).unwrap();
        let opt = optimize(&mdp, &r).unwrap();
        for actions in all_policies(n, k) {
            let g = average_reward(&mdp, &r, &Policy::deterministic(&actions, k).unwrap()).unwrap();
            assert!(opt.optimal_gain >= g - 1e-9);
        }
        if let Some(v) = &opt.optimal_value {
            let chain = analyze_chain(&mdp, &opt.optimal_policy).unwrap();
            assert!(poisson_residual(&chain.transition_matrix, r.values(), opt.optimal_gain, v) <= 1e-9);
        }
    }
}

#[test]
fn argmax_set_is_affine_invariant() {
    let mut rng = rng(14);
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let mdp = random_mdp(&mut rng, n, k, 0.4);
        let r = RewardFunction::new(random_vector(&mut rng, n, 5.0)).unwrap();
        let c = rng.random_range(0.01..10.0);
        let shift = rng.random_range(-10.0..10.0);
        let a = optimize(&mdp, &r).unwrap();
        let b = optimize(&mdp, &r.affine(c, shift)).unwrap();
        assert_eq!(a.all_optimal_policies, b.all_optimal_policies);
    }
}

#[test]
fn optimal_gain_matches_rollouts() {
    for (m, eps) in [(20.0, 1.0 / 15.0), (5.0, 0.3)] {
        let (mdp, r) = canonical::build(CanonicalParams::new(m, eps).unwrap()).unwrap();
        let opt = optimize(&mdp, &r).unwrap();
        let (best, se) = all_policies(3, 2)
            .iter()
            .enumerate()
            .map(|(i, actions)| rollout_gain(&mdp, r.values(), &one_hot_policy(actions, 2), 1_000_000, 50 + i as u64))
            .fold((f64::NEG_INFINITY, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
        assert!((best - opt.optimal_gain).abs() <= 3.0 * se, "{best} +- {se} vs {}", opt.optimal_gain);
    }
}
