//! Policy evaluation under the average-reward criterion.
//!
//! A policy turns the MDP into a Markov chain `P_pi`. Long-run state
//! frequencies from the initial state are assembled from the invariant
//! distributions of the recurrent classes, weighted by the probability of
//! being absorbed into each class. The bias (relative value) solves the
//! Poisson equation `V = r - g 1 + P_pi V` in the gauge `phi^T V = 0`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, RewardFunction};

/// Tolerance on `phi^T P = phi^T` and on Poisson residuals.
pub const INVARIANCE_TOL: f64 = 1e-9;
/// Tolerance on the total mass of an occupancy vector.
pub const OCCUPANCY_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct ChainAnalysis {
    #[serde(serialize_with = "serialize_matrix")]
    pub transition_matrix: DMatrix<f64>,
    /// Cesàro-limit state frequencies from the initial state.
    pub occupancy: Vec<f64>,
    /// Closed communicating classes, each sorted, ordered by smallest state.
    pub recurrent_classes: Vec<Vec<usize>>,
    /// Absorption probability from the initial state into each recurrent class.
    pub absorption: Vec<f64>,
    pub is_unichain_from_start: bool,
    /// Exactly one recurrent class in the whole chain.
    pub is_unichain: bool,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(ser)
}

/// `P_pi[s][s'] = sum_a pi[s][a] P[a][s][s']`.
pub fn induced_chain(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    policy.check_against(mdp)?;
    let n = mdp.n_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (next, q) in mdp.row(a, s).iter().enumerate() {
                p[(s, next)] += w * q;
            }
        }
    }
    Ok(p)
}

/// Chain induced by a deterministic action assignment, without building a [`Policy`].
pub(crate) fn deterministic_chain(mdp: &Mdp, actions: &[usize]) -> DMatrix<f64> {
    let n = mdp.n_states();
    DMatrix::from_fn(n, n, |s, next| mdp.prob(actions[s], s, next))
}

/// `reach[s][t]`: `t` can be reached from `s` in zero or more steps.
fn reachability(p: &DMatrix<f64>) -> Vec<Vec<bool>> {
    let n = p.nrows();
    (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(s) = stack.pop() {
                for t in 0..n {
                    if p[(s, t)] > 0.0 && !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
            seen
        })
        .collect()
}

/// Closed communicating classes of a stochastic matrix.
pub fn recurrent_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let reach = reachability(p);
    let recurrent = |s: usize| (0..n).all(|t| !reach[s][t] || reach[t][s]);
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    for s in 0..n {
        if assigned[s] || !recurrent(s) {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&t| reach[s][t]).collect();
        for &t in &class {
            assigned[t] = true;
        }
        classes.push(class);
    }
    classes
}

/// Invariant distribution of `p` restricted to a closed class, as a full-length vector.
pub fn class_stationary(p: &DMatrix<f64>, class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    // Rows 0..k-1: (P_C^T - I) x = 0 with the last equation replaced by sum(x) = 1.
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for (i, &si) in class.iter().enumerate() {
        for (j, &sj) in class.iter().enumerate() {
            a[(i, j)] = p[(sj, si)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    b[k - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("stationary system for class {class:?}")))?;
    let mut full = vec![0.0; p.nrows()];
    for (i, &s) in class.iter().enumerate() {
        full[s] = x[i].max(0.0);
    }
    let total: f64 = full.iter().sum();
    full.iter_mut().for_each(|x| *x /= total);
    Ok(full)
}

/// Probability of eventually entering each class from `start`.
fn absorption_probabilities(p: &DMatrix<f64>, classes: &[Vec<usize>], start: usize) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut class_of = vec![None; n];
    for (c, class) in classes.iter().enumerate() {
        for &s in class {
            class_of[s] = Some(c);
        }
    }
    if let Some(c) = class_of[start] {
        let mut out = vec![0.0; classes.len()];
        out[c] = 1.0;
        return Ok(out);
    }
    let transient: Vec<usize> = (0..n).filter(|&s| class_of[s].is_none()).collect();
    let m = transient.len();
    let mut a = DMatrix::identity(m, m);
    for (i, &s) in transient.iter().enumerate() {
        for (j, &t) in transient.iter().enumerate() {
            a[(i, j)] -= p[(s, t)];
        }
    }
    let lu = a.lu();
    let start_idx = transient.iter().position(|&s| s == start).expect("start is transient");
    classes
        .iter()
        .map(|class| {
            let b = DVector::from_iterator(m, transient.iter().map(|&s| class.iter().map(|&t| p[(s, t)]).sum::<f64>()));
            let h = lu
                .solve(&b)
                .ok_or_else(|| Error::Singular("absorption system on transient states".into()))?;
            Ok(h[start_idx].clamp(0.0, 1.0))
        })
        .collect()
}

pub fn analyze_chain(mdp: &Mdp, policy: &Policy) -> Result<ChainAnalysis> {
    let p = induced_chain(mdp, policy)?;
    analyze_matrix(p, mdp.initial_state())
}

pub(crate) fn analyze_matrix(p: DMatrix<f64>, start: usize) -> Result<ChainAnalysis> {
    let classes = recurrent_classes(&p);
    let absorption = absorption_probabilities(&p, &classes, start)?;
    let n = p.nrows();
    let mut occupancy = vec![0.0; n];
    for (class, &weight) in classes.iter().zip(&absorption) {
        if weight == 0.0 {
            continue;
        }
        let pi = class_stationary(&p, class)?;
        for s in 0..n {
            occupancy[s] += weight * pi[s];
        }
    }
    let total: f64 = occupancy.iter().sum();
    occupancy.iter_mut().for_each(|x| *x /= total);
    let reachable = absorption.iter().filter(|&&w| w > 0.0).count();
    Ok(ChainAnalysis {
        is_unichain_from_start: reachable == 1,
        is_unichain: classes.len() == 1,
        transition_matrix: p,
        occupancy,
        recurrent_classes: classes,
        absorption,
    })
}

pub fn occupancy_from_start(mdp: &Mdp, policy: &Policy) -> Result<Vec<f64>> {
    Ok(analyze_chain(mdp, policy)?.occupancy)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Average reward per step from the initial state.
pub fn average_reward(mdp: &Mdp, r: &RewardFunction, policy: &Policy) -> Result<f64> {
    r.check_len(mdp.n_states())?;
    Ok(dot(r.values(), &occupancy_from_start(mdp, policy)?))
}

/// Gain, bias and occupancy of one policy.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub gain: f64,
    pub value: Vec<f64>,
    pub occupancy: Vec<f64>,
}

/// Bias vector of `policy` under reward `r`, normalized so that `phi^T V = 0`.
pub fn relative_value(mdp: &Mdp, r: &RewardFunction, policy: &Policy) -> Result<Vec<f64>> {
    Ok(evaluate(mdp, r, policy)?.value)
}

pub fn evaluate(mdp: &Mdp, r: &RewardFunction, policy: &Policy) -> Result<Evaluation> {
    r.check_len(mdp.n_states())?;
    let chain = analyze_chain(mdp, policy)?;
    evaluate_chain(&chain, r)
}

pub(crate) fn evaluate_chain(chain: &ChainAnalysis, r: &RewardFunction) -> Result<Evaluation> {
    if !chain.is_unichain_from_start {
        return Err(Error::UnsupportedStructure(format!(
            "{} recurrent classes reachable from the initial state",
            chain.absorption.iter().filter(|&&w| w > 0.0).count()
        )));
    }
    if !chain.is_unichain {
        return Err(Error::UnsupportedStructure(format!(
            "{} recurrent classes; the Poisson equation has no single-gain solution",
            chain.recurrent_classes.len()
        )));
    }
    let p = &chain.transition_matrix;
    let n = p.nrows();
    let phi = DVector::from_column_slice(&chain.occupancy);
    let gain = dot(r.values(), &chain.occupancy);
    let ones = DVector::from_element(n, 1.0);
    let system = DMatrix::identity(n, n) - p + &ones * phi.transpose();
    let rhs = DVector::from_iterator(n, r.values().iter().map(|x| x - gain));
    let v = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Poisson system I - P + 1 phi^T".into()))?;
    Ok(Evaluation { gain, value: v.iter().copied().collect(), occupancy: chain.occupancy.clone() })
}

/// `max_s |V - r + g 1 - P V|`.
pub fn poisson_residual(p: &DMatrix<f64>, r: &[f64], gain: f64, v: &[f64]) -> f64 {
    let pv = p * DVector::from_column_slice(v);
    (0..v.len())
        .map(|s| (v[s] - r[s] + gain - pv[s]).abs())
        .fold(0.0, f64::max)
}

/// `max_s' |(phi^T P)(s') - phi(s')|`.
pub fn invariance_residual(p: &DMatrix<f64>, phi: &[f64]) -> f64 {
    let row = DVector::from_column_slice(phi).transpose() * p;
    (0..phi.len()).map(|s| (row[s] - phi[s]).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle() -> Mdp {
        Mdp::new(vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]], 0).unwrap()
    }

    #[test]
    fn single_action_chain_is_the_action_matrix() {
        let mdp = cycle();
        let p = induced_chain(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn uniform_policy_mixes_rows() {
        let mdp = Mdp::new(
            vec![
                vec![vec![0.2, 0.8], vec![1.0, 0.0]],
                vec![vec![0.6, 0.4], vec![0.5, 0.5]],
            ],
            0,
        )
        .unwrap();
        let p = induced_chain(&mdp, &Policy::uniform(2, 2)).unwrap();
        let expected = [0.4, 0.6, 0.75, 0.25];
        for (x, y) in p.transpose().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_invalid_input() {
        let mdp = cycle();
        let err = induced_chain(&mdp, &Policy::uniform(3, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn two_state_cycle_bias() {
        // Hand solve: g = 1/2, V(0) - V(1) = 1/2, (V(0) + V(1)) / 2 = 0.
        let mdp = cycle();
        let r = RewardFunction::new(vec![1.0, 0.0]).unwrap();
        let eval = evaluate(&mdp, &r, &Policy::uniform(2, 1)).unwrap();
        assert!((eval.gain - 0.5).abs() < 1e-15);
        assert!((eval.value[0] - 0.25).abs() < 1e-12);
        assert!((eval.value[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_has_zero_bias() {
        let mdp = cycle();
        let r = RewardFunction::constant(2, 3.5);
        let eval = evaluate(&mdp, &r, &Policy::uniform(2, 1)).unwrap();
        assert!((eval.gain - 3.5).abs() < 1e-14);
        assert!(eval.value.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn multichain_from_start_rejected_but_averaged() {
        // 0 splits into two absorbing states.
        let mdp = Mdp::new(
            vec![vec![vec![0.0, 0.25, 0.75], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]],
            0,
        )
        .unwrap();
        let policy = Policy::uniform(3, 1);
        let chain = analyze_chain(&mdp, &policy).unwrap();
        assert_eq!(chain.recurrent_classes, vec![vec![1], vec![2]]);
        assert!(!chain.is_unichain_from_start);
        assert!((chain.occupancy[1] - 0.25).abs() < 1e-14);
        assert!((chain.occupancy[2] - 0.75).abs() < 1e-14);
        let r = RewardFunction::new(vec![0.0, 4.0, 0.0]).unwrap();
        assert!((average_reward(&mdp, &r, &policy).unwrap() - 1.0).abs() < 1e-14);
        let err = relative_value(&mdp, &r, &policy).unwrap_err();
        assert!(matches!(err, Error::UnsupportedStructure(_)));
    }

    #[test]
    fn unreachable_second_class_rejected_for_bias() {
        let mdp = Mdp::new(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]], 0).unwrap();
        let chain = analyze_chain(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert!(chain.is_unichain_from_start);
        assert!(!chain.is_unichain);
        let r = RewardFunction::new(vec![1.0, 0.0]).unwrap();
        assert!((average_reward(&mdp, &r, &Policy::uniform(2, 1)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(relative_value(&mdp, &r, &Policy::uniform(2, 1)), Err(Error::UnsupportedStructure(_))));
    }
}
