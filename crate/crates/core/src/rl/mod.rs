//! Reinforcement-learning agents that tune the clipped affine policies online.
//!
//! One [`AgentState`] covers the four variants: plain online learning,
//! energy lookahead (`e`/`p` read from the known arrival), channel lookahead
//! (`γ̂` affine in the known next-slot SNR) and both combined. Each variant
//! runs with either the optimistic or the robust policy.

mod adam;
mod agent;
mod reparam;
mod replay;
mod snapshot;

pub use adam::Adam;
pub use agent::{AgentConfig, AgentError, AgentScheme, AgentState, AuxEstimates, PolicyKind};
pub use reparam::{logit, sigmoid, softplus, softplus_inv, ReparamVars};
pub use replay::{ReplayMemory, Transition};

use crate::model::{ModelError, SystemState};

/// A system an agent can interact with, one slot at a time.
pub trait Environment {
    fn capacity(&self) -> f64;

    /// Observable state at the start of the current slot.
    fn state(&self) -> SystemState;

    /// Spends `action` in the current slot, returns the reward and advances.
    fn step(&mut self, action: f64) -> Result<f64, ModelError>;
}
