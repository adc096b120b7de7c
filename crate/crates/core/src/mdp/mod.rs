//! Discretized average-reward MDPs and policy iteration for the optimal
//! baselines (no lookahead, energy lookahead, channel lookahead).
//!
//! The state is `(battery, γ[, lookahead])`. Because the channel and the
//! lookahead are drawn independently every slot, the value after a decision
//! only depends on the next battery level and, with channel lookahead, on
//! the already known next-slot channel. Policy evaluation therefore solves
//! for the expected bias `H(b, κ)` over the battery grid and continuation
//! class `κ` instead of the full state space; the bias of every grid state
//! is recovered from it afterwards.

mod build;
pub mod cache;
mod finite;
mod grid;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::DiscreteMdp;
pub use finite::{solve_finite, FiniteAction, FiniteMdp, FiniteSolution};
pub use grid::{bracket, Axis};
pub use solve::{evaluate_policy_table, gain_of, policy_iteration, PolicySolution, SolveOptions};

use crate::model::ModelError;

/// Which one-slot lookahead augments the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lookahead {
    None,
    Energy,
    Channel,
}

impl Lookahead {
    pub fn as_str(self) -> &'static str {
        match self {
            Lookahead::None => "none",
            Lookahead::Energy => "energy",
            Lookahead::Channel => "channel",
        }
    }
}

impl std::str::FromStr for Lookahead {
    type Err = MdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Lookahead::None),
            "energy" => Ok(Lookahead::Energy),
            "channel" => Ok(Lookahead::Channel),
            _ => Err(MdpError::Grid(format!("unknown lookahead mode `{s}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy iteration did not converge in {iterations} iterations (last gain {})", last.gain)]
    NoConvergence { iterations: usize, last: Box<PolicySolution> },
    #[error("policy evaluation failed: {0}")]
    Evaluation(String),
    #[error("state lacks the {0} lookahead the policy table needs")]
    MissingLookahead(&'static str),
    #[error("cache i/o: {0}")]
    Cache(String),
}

/// Grid sizes of the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub battery_levels: usize,
    pub gamma_levels: usize,
    pub action_levels: usize,
    /// Nodes of the lookahead axis; 0 without lookahead. Channel lookahead
    /// reuses the γ grid, so it must equal `gamma_levels`.
    pub lookahead_levels: usize,
    pub gamma_truncation_quantile: f64,
}

impl GridSpec {
    pub fn desk(lookahead: Lookahead) -> Self {
        match lookahead {
            Lookahead::None => Self::new(100, 20, 100, 0),
            Lookahead::Energy | Lookahead::Channel => Self::new(60, 12, 60, 12),
        }
    }

    pub fn paper(lookahead: Lookahead) -> Self {
        match lookahead {
            Lookahead::None => Self::new(250, 50, 250, 0),
            Lookahead::Energy | Lookahead::Channel => Self::new(150, 20, 150, 20),
        }
    }

    pub fn new(battery: usize, gamma: usize, action: usize, lookahead: usize) -> Self {
        Self {
            battery_levels: battery,
            gamma_levels: gamma,
            action_levels: action,
            lookahead_levels: lookahead,
            gamma_truncation_quantile: 0.999,
        }
    }

    pub fn validate(&self, lookahead: Lookahead) -> Result<(), MdpError> {
        let bad = |m: String| Err(MdpError::Grid(m));
        if self.battery_levels < 2 || self.action_levels < 2 || self.gamma_levels < 2 {
            return bad(format!(
                "battery, gamma and action levels must be at least 2 (got {}, {}, {})",
                self.battery_levels, self.gamma_levels, self.action_levels
            ));
        }
        if self.battery_levels > u32::MAX as usize || self.action_levels > u32::MAX as usize {
            return bad("grid too large".into());
        }
        if !(self.gamma_truncation_quantile > 0.0 && self.gamma_truncation_quantile < 1.0) {
            return bad(format!(
                "gamma truncation quantile must lie in (0, 1), got {}",
                self.gamma_truncation_quantile
            ));
        }
        match lookahead {
            Lookahead::None => {}
            Lookahead::Energy if self.lookahead_levels < 2 => {
                return bad("energy lookahead needs at least 2 lookahead levels".into());
            }
            Lookahead::Channel if self.lookahead_levels != self.gamma_levels => {
                return bad(format!(
                    "channel lookahead reuses the gamma grid: lookahead_levels ({}) must equal gamma_levels ({})",
                    self.lookahead_levels, self.gamma_levels
                ));
            }
            _ => {}
        }
        Ok(())
    }
}
