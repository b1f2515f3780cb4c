//! The three-state common / instrumental / terminal example.
//!
//! State 0 is the common state (reward 0), state 1 the instrumental goal
//! (reward -1) and state 2 the terminal goal (reward `M`). `move` leaves the
//! common state with probability `epsilon`, goes from the instrumental goal to
//! the terminal goal, and from the terminal goal back to the common state.
//! `stay` self-loops at the common state and instrumental goal; at the terminal
//! goal it also returns to the common state.

use serde::{Deserialize, Serialize};

use crate::chain::{evaluate, ChainAnalysis};
use crate::error::{invalid, Error, Result};
use crate::mdp::{Mdp, Policy, RewardFunction};
use crate::optimize::{optimize_with, OptimizationResult, OptimizeOptions};
use crate::preference::{ComparisonDistribution, Trajectory, TrajectoryPair};

pub const MOVE: usize = 0;
pub const STAY: usize = 1;
pub const COMMON: usize = 0;
pub const INSTRUMENTAL: usize = 1;
pub const TERMINAL: usize = 2;

/// Gain of the misaligned policy (move, then stay at the instrumental goal).
pub const WORST_GAIN: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalParams {
    pub m: f64,
    pub epsilon: f64,
}

impl CanonicalParams {
    pub fn new(m: f64, epsilon: f64) -> Result<Self> {
        if !m.is_finite() {
            return invalid(format!("M = {m} must be finite"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return invalid(format!("epsilon = {epsilon} must lie in (0, 1)"));
        }
        Ok(Self { m, epsilon })
    }
}

pub fn build(params: CanonicalParams) -> Result<(Mdp, RewardFunction)> {
    let p = CanonicalParams::new(params.m, params.epsilon)?;
    let e = p.epsilon;
    let movement = vec![vec![1.0 - e, e, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
    let stay = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
    let mdp = Mdp::new(vec![movement, stay], COMMON)?;
    Ok((mdp, RewardFunction::new(vec![0.0, -1.0, p.m])?))
}

/// Deterministic policy choosing `at_common` and `at_instrumental`; the terminal
/// goal always takes `move`.
pub fn policy(at_common: usize, at_instrumental: usize) -> Policy {
    Policy::deterministic(&[at_common, at_instrumental, MOVE], 2).expect("valid canonical actions")
}

/// Action mask pinning the terminal goal to `move`. Both actions there are
/// identical, so this is the only way for the optimum to be unique.
pub fn action_mask() -> Vec<Vec<usize>> {
    vec![vec![MOVE, STAY], vec![MOVE, STAY], vec![MOVE]]
}

pub fn optimize_restricted(mdp: &Mdp, r: &RewardFunction) -> Result<OptimizationResult> {
    optimize_with(mdp, r, &OptimizeOptions { allowed: Some(action_mask()), ..Default::default() })
}

/// `epsilon (M - 1) / (1 + 2 epsilon)`.
pub fn closed_form_gain(params: CanonicalParams) -> f64 {
    params.epsilon * (params.m - 1.0) / (1.0 + 2.0 * params.epsilon)
}

/// Stationary distribution of the move-everywhere policy.
pub fn aligned_occupancy(params: CanonicalParams) -> [f64; 3] {
    let d = 1.0 + 2.0 * params.epsilon;
    [1.0 / d, params.epsilon / d, params.epsilon / d]
}

/// `(V(terminal) - V(common), V(instrumental) - V(terminal)) = (M - r*, -1 - r*)`.
pub fn closed_form_value_gaps(params: CanonicalParams) -> (f64, f64) {
    let gain = closed_form_gain(params);
    (params.m - gain, -1.0 - gain)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueGapCheck {
    pub closed_form: (f64, f64),
    pub solved: (f64, f64),
    pub optimal_value: Vec<f64>,
}

/// Closed-form gaps next to the Poisson-solved ones, after checking that the
/// optimal policy is unique.
pub fn verified_value_gaps(params: CanonicalParams) -> Result<ValueGapCheck> {
    let (mdp, r) = build(params)?;
    let opt = optimize_restricted(&mdp, &r)?;
    if !opt.is_unique {
        return Err(Error::IllPosed(format!(
            "optimal policy is not unique at M = {}, epsilon = {}",
            params.m, params.epsilon
        )));
    }
    let v = opt.optimal_value.ok_or_else(|| Error::UnsupportedStructure("optimal chain is multichain".into()))?;
    Ok(ValueGapCheck {
        closed_form: closed_form_value_gaps(params),
        solved: (v[TERMINAL] - v[COMMON], v[INSTRUMENTAL] - v[TERMINAL]),
        optimal_value: v,
    })
}

/// Optimal relative value (gauge `phi^T V = 0`) together with the optimum.
pub fn optimal_value(params: CanonicalParams) -> Result<(Mdp, RewardFunction, OptimizationResult, Vec<f64>)> {
    let (mdp, r) = build(params)?;
    let opt = optimize_restricted(&mdp, &r)?;
    if !opt.is_unique {
        return Err(Error::IllPosed("canonical optimum is not unique".into()));
    }
    let v = evaluate(&mdp, &r, &opt.optimal_policy)?.value;
    Ok((mdp, r, opt, v))
}

/// Both sufficient conditions for the proxy optimum to park at the instrumental goal.
pub fn misalignment_condition(r_hat: &[f64], epsilon: f64) -> Result<bool> {
    if r_hat.len() != 3 {
        return invalid(format!("canonical proxy needs 3 entries, got {}", r_hat.len()));
    }
    let above_common = r_hat[INSTRUMENTAL] > r_hat[COMMON];
    let beats_cycle = r_hat[INSTRUMENTAL] > (r_hat[COMMON] + epsilon * r_hat[TERMINAL]) / (1.0 + epsilon);
    Ok(above_common && beats_cycle)
}

/// `(beta* / 3, 9 / beta*^2)`: any `epsilon` below the first and `M` above the
/// second guarantee severe misalignment for proxies conflating with degree `>= beta*`.
pub fn theorem1_regime(beta_star: f64) -> Result<(f64, f64)> {
    if !(beta_star > 0.0 && beta_star <= 1.0) {
        return invalid(format!("beta* = {beta_star} outside (0, 1]"));
    }
    Ok((beta_star / 3.0, 9.0 / (beta_star * beta_star)))
}

/// `(1 + epsilon + epsilon^2) / (1 - epsilon^2)`: above this `M`, a reward learned
/// from transition comparisons yields the misaligned policy.
pub fn learning_threshold(epsilon: f64) -> f64 {
    (1.0 + epsilon + epsilon * epsilon) / (1.0 - epsilon * epsilon)
}

/// Uniform over `(common, move, instrumental)` vs `(common, stay, common)` and
/// `(instrumental, move, terminal)` vs `(instrumental, stay, instrumental)`.
pub fn default_comparisons() -> ComparisonDistribution {
    let step = |s, a, t| Trajectory::new(vec![s, t], vec![a]).expect("one-step trajectory");
    ComparisonDistribution::new(vec![
        (
            TrajectoryPair::new(step(COMMON, MOVE, INSTRUMENTAL), step(COMMON, STAY, COMMON)),
            0.5,
        ),
        (
            TrajectoryPair::new(step(INSTRUMENTAL, MOVE, TERMINAL), step(INSTRUMENTAL, STAY, INSTRUMENTAL)),
            0.5,
        ),
    ])
    .expect("valid default distribution")
}

/// Summary used by the CLI and bindings.
#[derive(Debug, Clone, Serialize)]
pub struct CanonicalAnalysis {
    pub params: CanonicalParams,
    pub reward: Vec<f64>,
    pub closed_form_gain: f64,
    pub optimization: OptimizationResult,
    pub optimal_value: Vec<f64>,
    pub value_gaps_closed_form: (f64, f64),
    pub value_gaps_solved: (f64, f64),
    pub aligned_chain: ChainAnalysis,
    pub policy_gains: Vec<(Vec<usize>, f64)>,
}

pub fn analyze(params: CanonicalParams) -> Result<CanonicalAnalysis> {
    let (mdp, r, opt, v) = optimal_value(params)?;
    let gains = crate::optimize::policy_gains(&mdp, &r, &OptimizeOptions::default())?;
    Ok(CanonicalAnalysis {
        params,
        reward: r.values().to_vec(),
        closed_form_gain: closed_form_gain(params),
        value_gaps_closed_form: closed_form_value_gaps(params),
        value_gaps_solved: (v[TERMINAL] - v[COMMON], v[INSTRUMENTAL] - v[TERMINAL]),
        aligned_chain: crate::chain::analyze_chain(&mdp, &policy(MOVE, MOVE))?,
        optimization: opt,
        optimal_value: v,
        policy_gains: gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_validation() {
        assert!(CanonicalParams::new(20.0, 1.0).is_err());
        assert!(CanonicalParams::new(20.0, 0.0).is_err());
        assert!(CanonicalParams::new(f64::NAN, 0.5).is_err());
        assert!(CanonicalParams::new(20.0, 0.999).is_ok());
        assert!(build(CanonicalParams { m: 1.0, epsilon: 1.5 }).is_err());
    }

    #[test]
    fn closed_forms() {
        let p = CanonicalParams::new(20.0, 1.0 / 15.0).unwrap();
        assert!((closed_form_gain(p) - 19.0 / 17.0).abs() < 1e-14);
        assert_eq!(closed_form_gain(CanonicalParams::new(1.0, 0.3).unwrap()), 0.0);
        assert!((closed_form_gain(CanonicalParams::new(20.0, 0.5).unwrap()) - 4.75).abs() < 1e-14);
        let (g31, g23) = closed_form_value_gaps(p);
        assert!((g31 - 321.0 / 17.0).abs() < 1e-12);
        assert!((g23 + 36.0 / 17.0).abs() < 1e-12);
        let (g31, g23) = closed_form_value_gaps(CanonicalParams::new(1.0, 0.5).unwrap());
        assert_eq!((g31, g23), (1.0, -1.0));
    }

    #[test]
    fn tie_at_unit_terminal_reward_is_reported() {
        assert!(matches!(verified_value_gaps(CanonicalParams::new(1.0, 0.5).unwrap()), Err(Error::IllPosed(_))));
    }

    #[test]
    fn misalignment_condition_cases() {
        let v = [0.0, 285.0 / 17.0, 321.0 / 17.0];
        assert!(misalignment_condition(&v, 1.0 / 15.0).unwrap());
        assert!(!misalignment_condition(&[0.0, -1.0, 20.0], 1.0 / 15.0).unwrap());
        assert!(misalignment_condition(&[0.0, 1.0, 0.0], 0.5).unwrap());
        assert!(misalignment_condition(&[0.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn regime_bounds() {
        assert_eq!(theorem1_regime(1.0).unwrap(), (1.0 / 3.0, 9.0));
        let (e, m) = theorem1_regime(0.05).unwrap();
        assert!((e - 1.0 / 60.0).abs() < 1e-15 && (m - 3600.0).abs() < 1e-9);
        let (e, m) = theorem1_regime(0.3).unwrap();
        assert!((e - 0.1).abs() < 1e-15 && (m - 100.0).abs() < 1e-9);
        assert!(theorem1_regime(0.0).is_err());
        assert!(theorem1_regime(1.1).is_err());
    }

    #[test]
    fn threshold_value() {
        assert!((learning_threshold(1.0 / 15.0) - 241.0 / 224.0).abs() < 1e-14);
        assert!((learning_threshold(0.5) - 7.0 / 3.0).abs() < 1e-14);
    }
}
