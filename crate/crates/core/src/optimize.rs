//! Exact average-reward optimization by enumerating deterministic policies.

use serde::Serialize;

use crate::chain::{analyze_matrix, deterministic_chain, evaluate_chain};
use crate::error::{invalid, Error, Result};
use crate::mdp::{Mdp, Policy, RewardFunction};

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;
/// Gains within this absolute distance of the best are reported as ties.
pub const GAIN_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub cap: u64,
    pub tie_tol: f64,
    /// Allowed actions per state; `None` allows every action everywhere.
    pub allowed: Option<Vec<Vec<usize>>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { cap: DEFAULT_ENUMERATION_CAP, tie_tol: GAIN_TIE_TOL, allowed: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub optimal_policy: Policy,
    pub optimal_actions: Vec<usize>,
    pub optimal_gain: f64,
    /// Bias of the first maximizer; `None` when that policy's chain has several
    /// recurrent classes.
    pub optimal_value: Option<Vec<f64>>,
    /// Every deterministic policy within the tie tolerance of the best gain, in
    /// lexicographic order.
    pub all_optimal_policies: Vec<Vec<usize>>,
    pub is_unique: bool,
}

/// Deterministic policies as action vectors, state 0 most significant.
pub struct DeterministicPolicies {
    choices: Vec<Vec<usize>>,
    cursor: Option<Vec<usize>>,
}

impl DeterministicPolicies {
    fn new(choices: Vec<Vec<usize>>) -> Self {
        let cursor = if choices.iter().any(|c| c.is_empty()) { None } else { Some(vec![0; choices.len()]) };
        Self { choices, cursor }
    }
}

impl Iterator for DeterministicPolicies {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let idx = self.cursor.as_mut()?;
        let out: Vec<usize> = idx.iter().zip(&self.choices).map(|(&i, c)| c[i]).collect();
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                self.cursor = None;
                break;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < self.choices[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
        Some(out)
    }
}

fn action_choices(mdp: &Mdp, allowed: Option<&Vec<Vec<usize>>>) -> Result<Vec<Vec<usize>>> {
    match allowed {
        None => Ok(vec![(0..mdp.n_actions()).collect(); mdp.n_states()]),
        Some(sets) => {
            if sets.len() != mdp.n_states() {
                return invalid(format!("action mask covers {} states, MDP has {}", sets.len(), mdp.n_states()));
            }
            for (s, set) in sets.iter().enumerate() {
                if set.is_empty() || set.iter().any(|&a| a >= mdp.n_actions()) {
                    return invalid(format!("action mask for state {s} is empty or out of range"));
                }
            }
            Ok(sets.iter().map(|set| {
                let mut set = set.clone();
                set.sort_unstable();
                set.dedup();
                set
            }).collect())
        }
    }
}

/// Enumerates deterministic policies, checking the cap first.
pub fn deterministic_policies(mdp: &Mdp, allowed: Option<&Vec<Vec<usize>>>, cap: u64) -> Result<DeterministicPolicies> {
    let choices = action_choices(mdp, allowed)?;
    let count = choices.iter().try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128)).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::Capacity { count, cap });
    }
    Ok(DeterministicPolicies::new(choices))
}

/// Gain from the initial state of every deterministic policy, in enumeration order.
pub fn policy_gains(mdp: &Mdp, r: &RewardFunction, options: &OptimizeOptions) -> Result<Vec<(Vec<usize>, f64)>> {
    r.check_len(mdp.n_states())?;
    deterministic_policies(mdp, options.allowed.as_ref(), options.cap)?
        .map(|actions| {
            let chain = analyze_matrix(deterministic_chain(mdp, &actions), mdp.initial_state())?;
            let gain = r.values().iter().zip(&chain.occupancy).map(|(x, y)| x * y).sum();
            Ok((actions, gain))
        })
        .collect()
}

pub fn optimize(mdp: &Mdp, r: &RewardFunction) -> Result<OptimizationResult> {
    optimize_with(mdp, r, &OptimizeOptions::default())
}

pub fn optimize_with(mdp: &Mdp, r: &RewardFunction, options: &OptimizeOptions) -> Result<OptimizationResult> {
    let gains = policy_gains(mdp, r, options)?;
    let best = gains.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
    let all_optimal_policies: Vec<Vec<usize>> = gains
        .into_iter()
        .filter(|(_, g)| *g >= best - options.tie_tol)
        .map(|(a, _)| a)
        .collect();
    let optimal_actions = all_optimal_policies[0].clone();
    let chain = analyze_matrix(deterministic_chain(mdp, &optimal_actions), mdp.initial_state())?;
    let optimal_gain = r.values().iter().zip(&chain.occupancy).map(|(x, y)| x * y).sum();
    let optimal_value = match evaluate_chain(&chain, r) {
        Ok(eval) => Some(eval.value),
        Err(Error::UnsupportedStructure(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(OptimizationResult {
        optimal_policy: Policy::deterministic(&optimal_actions, mdp.n_actions())?,
        optimal_actions,
        optimal_gain,
        optimal_value,
        is_unique: all_optimal_policies.len() == 1,
        all_optimal_policies,
    })
}

/// Whether exactly one deterministic policy attains the optimal gain.
pub fn assert_unique_optimal(result: &OptimizationResult) -> bool {
    result.all_optimal_policies.len() == 1
}
