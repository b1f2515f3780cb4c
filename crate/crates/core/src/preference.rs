//! Trajectory comparisons and choice models.
//!
//! Human choices follow the bootstrapped-return model: a segment
//! `(s_0, a_0, ..., s_T)` is scored `sum_{t<T} r(s_t) + V(s_T)`. The learner
//! assumes a logistic model on segment returns, the sum of `r` over every
//! state in the segment; for a one-step comparison `(s0, a, s1)` vs
//! `(s0, a', s1')` both models reduce to `sigma(V(s1) - V(s1'))` when the
//! learner's reward equals `V`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{Mdp, RewardFunction};

/// Name of the generator used by [`sample_dataset`]: ChaCha20 seeded with
/// `seed_from_u64`, one uniform draw for the pair then one for the label.
pub const SAMPLER_ID: &str = "rand_chacha::ChaCha20Rng/seed_from_u64/v1";

const DISTRIBUTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.len() != actions.len() + 1 {
            return invalid(format!(
                "trajectory with {} states needs {} actions, got {}",
                states.len(),
                states.len().saturating_sub(1),
                actions.len()
            ));
        }
        Ok(Self { states, actions })
    }

    /// Zero-transition trajectory sitting at `s`.
    pub fn at(s: usize) -> Self {
        Self { states: vec![s], actions: Vec::new() }
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn start(&self) -> usize {
        self.states[0]
    }

    pub fn last(&self) -> usize {
        *self.states.last().expect("trajectory has at least one state")
    }

    pub fn validate_for(&self, mdp: &Mdp) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return invalid("trajectory length mismatch");
        }
        if self.states.iter().any(|&s| s >= mdp.n_states()) || self.actions.iter().any(|&a| a >= mdp.n_actions()) {
            return invalid(format!("trajectory {:?}/{:?} out of MDP bounds", self.states, self.actions));
        }
        Ok(())
    }

    pub(crate) fn check_states(&self, n_states: usize) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return invalid("trajectory length mismatch");
        }
        if let Some(s) = self.states.iter().find(|&&s| s >= n_states) {
            return invalid(format!("state {s} out of range for {n_states} states"));
        }
        Ok(())
    }

    /// Visit counts of each state over the whole segment, terminal state included.
    pub fn state_counts(&self, n_states: usize) -> Vec<f64> {
        let mut counts = vec![0.0; n_states];
        for &s in &self.states {
            counts[s] += 1.0;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub h: Trajectory,
    #[serde(rename = "hp")]
    pub h_prime: Trajectory,
}

impl TrajectoryPair {
    pub fn new(h: Trajectory, h_prime: Trajectory) -> Self {
        Self { h, h_prime }
    }

    pub fn swapped(&self) -> Self {
        Self { h: self.h_prime.clone(), h_prime: self.h.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPair {
    pub pair: TrajectoryPair,
    pub probability: f64,
}

/// Finite-support distribution over trajectory pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeightedPair>", into = "Vec<WeightedPair>")]
pub struct ComparisonDistribution {
    support: Vec<WeightedPair>,
}

impl ComparisonDistribution {
    pub fn new(support: Vec<(TrajectoryPair, f64)>) -> Result<Self> {
        if support.is_empty() {
            return invalid("comparison distribution has empty support");
        }
        if let Some((_, p)) = support.iter().find(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
            return invalid(format!("support probability {p} must be positive"));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOL {
            return invalid(format!("support probabilities sum to {total}"));
        }
        Ok(Self { support: support.into_iter().map(|(pair, probability)| WeightedPair { pair, probability }).collect() })
    }

    /// Uniform over the given pairs.
    pub fn uniform(pairs: Vec<TrajectoryPair>) -> Result<Self> {
        let w = 1.0 / pairs.len().max(1) as f64;
        let mut support: Vec<(TrajectoryPair, f64)> = pairs.into_iter().map(|p| (p, w)).collect();
        // Put the rounding slack on the last entry so the total is one.
        let rest = (1.0 - w * (support.len().max(1) - 1) as f64).max(0.0);
        if let Some(last) = support.last_mut() {
            last.1 = rest;
        }
        Self::new(support)
    }

    pub fn support(&self) -> &[WeightedPair] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn check_states(&self, n_states: usize) -> Result<()> {
        for w in &self.support {
            w.pair.h.check_states(n_states)?;
            w.pair.h_prime.check_states(n_states)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

impl TryFrom<Vec<WeightedPair>> for ComparisonDistribution {
    type Error = crate::Error;

    fn try_from(v: Vec<WeightedPair>) -> Result<Self> {
        Self::new(v.into_iter().map(|w| (w.pair, w.probability)).collect())
    }
}

impl From<ComparisonDistribution> for Vec<WeightedPair> {
    fn from(d: ComparisonDistribution) -> Self {
        d.support
    }
}

/// One choice: `y = 1` means `h` was chosen over `hp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub h: Trajectory,
    pub hp: Trajectory,
    pub y: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreferenceDataset {
    pub records: Vec<PreferenceRecord>,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same pairs with every label flipped.
    pub fn flipped(&self) -> Self {
        Self { records: self.records.iter().map(|r| PreferenceRecord { y: 1 - r.y, ..r.clone() }).collect() }
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PreferenceRecord = serde_json::from_str(&line)?;
            if record.y > 1 {
                return invalid(format!("label y = {} must be 0 or 1", record.y));
            }
            Trajectory::new(record.h.states.clone(), record.h.actions.clone())?;
            Trajectory::new(record.hp.states.clone(), record.hp.actions.clone())?;
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// Standard logistic function; `logistic(x) + logistic(-x) == 1` exactly.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - logistic(-x)
    }
}

/// `sum_{t<T} r(s_t)`; the final state does not contribute.
pub fn partial_return(h: &Trajectory, r: &[f64]) -> f64 {
    h.states[..h.len()].iter().map(|&s| r[s]).sum()
}

/// `sum_{t<T} r(s_t) + v(s_T)`.
pub fn bootstrapped_return(h: &Trajectory, r: &[f64], v: &[f64]) -> f64 {
    partial_return(h, r) + v[h.last()]
}

/// Sum of `r` over every state of the segment, the score under the learner's model.
pub fn segment_return(h: &Trajectory, r: &[f64]) -> f64 {
    h.states.iter().map(|&s| r[s]).sum()
}

/// Probability that `h` is chosen over `h'` when choices follow bootstrapped returns.
pub fn choice_prob_bootstrapped(pair: &TrajectoryPair, r: &[f64], v: &[f64]) -> f64 {
    logistic(bootstrapped_return(&pair.h, r, v) - bootstrapped_return(&pair.h_prime, r, v))
}

/// Probability that `h` is chosen over `h'` under the learner's model with reward `r_tilde`.
pub fn choice_prob_partial(pair: &TrajectoryPair, r_tilde: &[f64]) -> f64 {
    logistic(segment_return(&pair.h, r_tilde) - segment_return(&pair.h_prime, r_tilde))
}

fn is_single_transition_pair(pair: &TrajectoryPair) -> bool {
    pair.h.len() == 1 && pair.h_prime.len() == 1 && pair.h.start() == pair.h_prime.start()
}

/// Every supported pair is two one-step transitions out of the same state.
pub fn compares_transitions(d: &ComparisonDistribution) -> bool {
    d.support().iter().all(|w| is_single_transition_pair(&w.pair))
}

/// Undirected graph on states with an edge between the successors of each
/// compared transition pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonGraph {
    pub n_states: usize,
    pub edges: Vec<(usize, usize)>,
    component: Vec<usize>,
}

impl ComparisonGraph {
    pub fn adjoins(&self, s: usize, t: usize) -> bool {
        self.edges.iter().any(|&(a, b)| (a, b) == (s, t) || (a, b) == (t, s))
    }

    pub fn connects(&self, s: usize, t: usize) -> bool {
        self.component[s] == self.component[t]
    }

    /// Component label per state (smallest state index in the component).
    pub fn components(&self) -> &[usize] {
        &self.component
    }

    pub fn connects_all(&self) -> bool {
        self.component.iter().all(|&c| c == self.component[0])
    }
}

pub fn comparison_graph(d: &ComparisonDistribution, n_states: usize) -> Result<ComparisonGraph> {
    if !compares_transitions(d) {
        return invalid("comparison distribution does not compare transitions");
    }
    d.check_states(n_states)?;
    let mut edges: Vec<(usize, usize)> = d
        .support()
        .iter()
        .map(|w| {
            let (a, b) = (w.pair.h.last(), w.pair.h_prime.last());
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    // Union-find with the smallest index as representative.
    let mut parent: Vec<usize> = (0..n_states).collect();
    fn find(parent: &mut [usize], s: usize) -> usize {
        let mut root = s;
        while parent[root] != root {
            root = parent[root];
        }
        parent[s] = root;
        root
    }
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let component = (0..n_states).map(|s| find(&mut parent, s)).collect();
    Ok(ComparisonGraph { n_states, edges, component })
}

pub fn connects(d: &ComparisonDistribution, n_states: usize, s: usize, t: usize) -> Result<bool> {
    Ok(comparison_graph(d, n_states)?.connects(s, t))
}

/// `n` iid choices: a pair drawn from `d`, then `y ~ Bernoulli(p*(h, h'))`.
pub fn sample_dataset(d: &ComparisonDistribution, r: &RewardFunction, v: &[f64], n: usize, seed: u64) -> Result<PreferenceDataset> {
    if n == 0 {
        return invalid("dataset size must be at least 1");
    }
    if v.len() != r.len() {
        return invalid("value and reward lengths differ");
    }
    d.check_states(r.len())?;
    let probs: Vec<f64> = d.support().iter().map(|w| choice_prob_bootstrapped(&w.pair, r.values(), v)).collect();
    let mut cumulative = Vec::with_capacity(d.len());
    let mut acc = 0.0;
    for w in d.support() {
        acc += w.probability;
        cumulative.push(acc);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let idx = cumulative.iter().position(|&c| u < c).unwrap_or(d.len() - 1);
            let pair = &d.support()[idx].pair;
            let y = u8::from(rng.random::<f64>() < probs[idx]);
            PreferenceRecord { h: pair.h.clone(), hp: pair.h_prime.clone(), y }
        })
        .collect();
    Ok(PreferenceDataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(s: usize, a: usize, t: usize) -> Trajectory {
        Trajectory::new(vec![s, t], vec![a]).unwrap()
    }

    #[test]
    fn trajectory_invariant() {
        assert!(Trajectory::new(vec![0, 1], vec![]).is_err());
        assert!(Trajectory::new(vec![0], vec![]).is_ok());
        let mdp = Mdp::new(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]], 0).unwrap();
        assert!(step(0, 1, 1).validate_for(&mdp).is_err());
        assert!(step(0, 0, 2).validate_for(&mdp).is_err());
        assert!(step(0, 0, 1).validate_for(&mdp).is_ok());
    }

    #[test]
    fn returns() {
        let r = [0.0, -1.0, 20.0];
        assert_eq!(partial_return(&Trajectory::at(2), &r), 0.0);
        let h = Trajectory::new(vec![0, 1, 2], vec![0, 0]).unwrap();
        assert_eq!(partial_return(&h, &r), -1.0);
        assert_eq!(partial_return(&h, &[2.5; 3]), 5.0);
        assert_eq!(bootstrapped_return(&Trajectory::at(1), &r, &[3.0, 4.0, 5.0]), 4.0);
        assert_eq!(bootstrapped_return(&h, &r, &[0.0; 3]), partial_return(&h, &r));
        assert_eq!(segment_return(&h, &r), 19.0);
    }

    #[test]
    fn choice_probabilities() {
        let r = [0.0, -1.0, 20.0];
        let v = [0.0, 5.0, 7.0];
        let same = TrajectoryPair::new(step(0, 0, 1), step(0, 0, 1));
        assert_eq!(choice_prob_bootstrapped(&same, &r, &v), 0.5);
        assert_eq!(choice_prob_partial(&same, &r), 0.5);
        let long = TrajectoryPair::new(step(0, 0, 1), Trajectory::new(vec![0, 1, 2], vec![0, 0]).unwrap());
        assert_eq!(choice_prob_partial(&long, &[1.0; 3]), logistic(-1.0));
        let pair = TrajectoryPair::new(step(0, 0, 1), step(0, 1, 2));
        let shifted: Vec<f64> = r.iter().map(|x| x + 7.0).collect();
        assert!((choice_prob_partial(&pair, &r) - choice_prob_partial(&pair, &shifted)).abs() < 1e-15);
    }

    #[test]
    fn logistic_is_monotone_and_complementary() {
        let mut prev = 0.0;
        for i in -400..=400 {
            let x = i as f64 * 0.1;
            let p = logistic(x);
            assert!(p >= prev);
            assert_eq!(p + logistic(-x), 1.0);
            prev = p;
        }
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn transition_predicates() {
        let ok = ComparisonDistribution::uniform(vec![TrajectoryPair::new(step(0, 0, 1), step(0, 1, 0))]).unwrap();
        assert!(compares_transitions(&ok));
        let different_start =
            ComparisonDistribution::uniform(vec![TrajectoryPair::new(step(0, 0, 1), step(1, 1, 0))]).unwrap();
        assert!(!compares_transitions(&different_start));
        let long = ComparisonDistribution::uniform(vec![TrajectoryPair::new(
            Trajectory::new(vec![0, 1, 2], vec![0, 0]).unwrap(),
            step(0, 1, 0),
        )])
        .unwrap();
        assert!(!compares_transitions(&long));
        assert!(comparison_graph(&long, 3).is_err());
    }

    #[test]
    fn graph_connectivity() {
        let single = ComparisonDistribution::uniform(vec![TrajectoryPair::new(step(0, 0, 1), step(0, 1, 0))]).unwrap();
        let g = comparison_graph(&single, 3).unwrap();
        assert!(g.connects(0, 1) && g.adjoins(1, 0));
        assert!(!g.connects(0, 2) && !g.connects(1, 2));
        assert!(g.connects(2, 2));
        assert!(!g.connects_all());
        // Self-comparison edges only: reflexive connectivity.
        let loops = ComparisonDistribution::uniform(vec![TrajectoryPair::new(step(0, 0, 1), step(0, 1, 1))]).unwrap();
        let g = comparison_graph(&loops, 2).unwrap();
        assert!(g.connects(1, 1) && !g.connects(0, 1));
    }

    #[test]
    fn distribution_validation() {
        let pair = TrajectoryPair::new(step(0, 0, 1), step(0, 1, 0));
        assert!(ComparisonDistribution::new(vec![(pair.clone(), 0.6)]).is_err());
        assert!(ComparisonDistribution::new(vec![(pair.clone(), 1.0), (pair.clone(), 0.0)]).is_err());
        assert!(ComparisonDistribution::new(vec![]).is_err());
        let third = ComparisonDistribution::uniform(vec![pair.clone(), pair.clone(), pair]).unwrap();
        assert_eq!(third.len(), 3);
    }

    #[test]
    fn jsonl_round_trip() {
        let d = ComparisonDistribution::uniform(vec![TrajectoryPair::new(step(0, 0, 1), step(0, 1, 0))]).unwrap();
        let r = RewardFunction::new(vec![0.0, 1.0]).unwrap();
        let data = sample_dataset(&d, &r, &[0.0, 1.0], 20, 3).unwrap();
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"hp\""));
        assert_eq!(PreferenceDataset::read_jsonl(&buf[..]).unwrap(), data);
        assert!(PreferenceDataset::read_jsonl(&b"{\"h\":{\"states\":[0],\"actions\":[]},\"hp\":{\"states\":[0],\"actions\":[]},\"y\":2}\n"[..]).is_err());
    }

    #[test]
    fn sampling_rejects_empty() {
        let d = ComparisonDistribution::uniform(vec![TrajectoryPair::new(step(0, 0, 1), step(0, 1, 0))]).unwrap();
        let r = RewardFunction::new(vec![0.0, 1.0]).unwrap();
        assert!(sample_dataset(&d, &r, &[0.0, 1.0], 0, 1).is_err());
    }
}
