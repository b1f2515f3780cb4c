//! Average-reward MDP toolkit: exact policy evaluation and optimization,
//! reward/value conflation, preference-based reward learning and the
//! geometry of invariant-distribution polytopes.

pub mod canonical;
pub mod chain;
pub mod cli;
pub mod conflation;
pub mod error;
pub mod learning;
mod lp;
pub mod mdp;
pub mod optimize;
pub mod polytope;
pub mod preference;

pub use error::{Error, Result};
pub use mdp::{Mdp, MdpDocument, Policy, RewardFunction};
