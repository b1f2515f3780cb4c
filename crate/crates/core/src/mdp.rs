//! Finite MDPs, state reward functions and stationary policies.
//!
//! Transitions are stored as `P[a][s][s']`. Probabilities are validated on
//! construction and never renormalized.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Row sums of transition tensors and policies must be within this of one.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<Vec<f64>>>,
    initial_state: usize,
}

impl Mdp {
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, initial_state: usize) -> Result<Self> {
        let n_actions = transitions.len();
        if n_actions == 0 {
            return invalid("an MDP needs at least one action");
        }
        let n_states = transitions[0].len();
        if n_states == 0 {
            return invalid("an MDP needs at least one state");
        }
        for (a, matrix) in transitions.iter().enumerate() {
            if matrix.len() != n_states {
                return invalid(format!("action {a} has {} rows, expected {n_states}", matrix.len()));
            }
            for (s, row) in matrix.iter().enumerate() {
                check_distribution(row, n_states)
                    .map_err(|e| crate::Error::InvalidInput(format!("P[{a}][{s}]: {e}")))?;
            }
        }
        if initial_state >= n_states {
            return invalid(format!("initial state {initial_state} out of range for {n_states} states"));
        }
        Ok(Self { n_states, n_actions, transitions, initial_state })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Probability of moving from `s` to `next` under action `a`.
    pub fn prob(&self, a: usize, s: usize, next: usize) -> f64 {
        self.transitions[a][s][next]
    }

    pub fn row(&self, a: usize, s: usize) -> &[f64] {
        &self.transitions[a][s]
    }

    pub fn transitions(&self) -> &[Vec<Vec<f64>>] {
        &self.transitions
    }

    pub fn with_initial_state(&self, initial_state: usize) -> Result<Self> {
        Self::new(self.transitions.clone(), initial_state)
    }
}

fn check_distribution(row: &[f64], len: usize) -> std::result::Result<(), String> {
    if row.len() != len {
        return Err(format!("length {} != {len}", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("entry {p} outside [0, 1]"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// A reward (or proxy reward, or value) attached to each state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardFunction(Vec<f64>);

impl RewardFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("reward function has no entries");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("reward entries must be finite");
        }
        Ok(Self(values))
    }

    pub fn constant(n_states: usize, value: f64) -> Self {
        Self(vec![value; n_states])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    /// `scale * r + shift`, applied entrywise.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        Self(self.0.iter().map(|x| scale * x + shift).collect())
    }

    pub(crate) fn check_len(&self, n_states: usize) -> Result<()> {
        if self.0.len() != n_states {
            return invalid(format!("reward has {} entries, MDP has {n_states} states", self.0.len()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for RewardFunction {
    type Error = crate::Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RewardFunction> for Vec<f64> {
    fn from(r: RewardFunction) -> Self {
        r.0
    }
}

/// A stationary (possibly randomized) policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Policy {
    probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("policy has no states");
        }
        let n_actions = probs[0].len();
        if n_actions == 0 {
            return invalid("policy has no actions");
        }
        for (s, row) in probs.iter().enumerate() {
            check_distribution(row, n_actions)
                .map_err(|e| crate::Error::InvalidInput(format!("pi[{s}]: {e}")))?;
        }
        Ok(Self { probs })
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if let Some(a) = actions.iter().find(|&&a| a >= n_actions) {
            return invalid(format!("action {a} out of range for {n_actions} actions"));
        }
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self::new(probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// The chosen action per state, if every row is a point mass.
    pub fn actions(&self) -> Option<Vec<usize>> {
        self.probs
            .iter()
            .map(|row| {
                let ones: Vec<usize> = (0..row.len()).filter(|&a| row[a] == 1.0).collect();
                (ones.len() == 1).then(|| ones[0])
            })
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.actions().is_some()
    }

    pub(crate) fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return invalid(format!(
                "policy is {}x{}, MDP has {} states and {} actions",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            ));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for Policy {
    type Error = crate::Error;

    fn try_from(probs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<Policy> for Vec<Vec<f64>> {
    fn from(p: Policy) -> Self {
        p.probs
    }
}

/// JSON interchange document for an MDP with an optional state reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub initial_state: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Vec<f64>>,
}

impl MdpDocument {
    pub fn new(mdp: &Mdp, reward: Option<&RewardFunction>) -> Self {
        Self {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            transitions: mdp.transitions.clone(),
            initial_state: mdp.initial_state,
            reward: reward.map(|r| r.values().to_vec()),
        }
    }

    /// Validates the document and splits it into the MDP and its reward, if any.
    pub fn into_parts(self) -> Result<(Mdp, Option<RewardFunction>)> {
        let reward = self.reward.clone().map(RewardFunction::new).transpose()?;
        let mdp = Mdp::try_from(self)?;
        if let Some(r) = &reward {
            r.check_len(mdp.n_states())?;
        }
        Ok((mdp, reward))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = crate::Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        if doc.transitions.len() != doc.n_actions {
            return invalid(format!(
                "n_actions = {} but transitions has {} action matrices",
                doc.n_actions,
                doc.transitions.len()
            ));
        }
        let mdp = Mdp::new(doc.transitions, doc.initial_state)?;
        if mdp.n_states != doc.n_states {
            return invalid(format!("n_states = {} but transition rows have {}", doc.n_states, mdp.n_states));
        }
        Ok(mdp)
    }
}

impl From<Mdp> for MdpDocument {
    fn from(mdp: Mdp) -> Self {
        MdpDocument::new(&mdp, None)
    }
}
