//! Episode simulation and evaluation sweeps.
//!
//! Every scheme on a scenario sees the same arrivals, channel draws and
//! initial batteries (common random numbers) unless the plan turns that off,
//! so paired comparisons between schemes have low variance.

mod env;
mod episode;
mod eval;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use env::SimEnv;
pub use episode::{run_episode, Controller, TraceRow};
pub use eval::{
    evaluate, performance_loss, CellFailure, CellResult, EvalPlan, EvalReport, GridPreset, LossSummary,
    PiGain, Schedule, CSV_COLUMNS,
};

use crate::mdp::{Lookahead, MdpError};
use crate::model::ModelError;
use crate::rl::{AgentError, AgentScheme, PolicyKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("state invariant violated at step {step}: {detail}")]
    Invariant { step: u64, detail: String },
    #[error("invalid plan: {0}")]
    Plan(String),
}

/// The power-control schemes that can be simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "OPT")]
    Opt,
    #[serde(rename = "OCA")]
    Oca,
    #[serde(rename = "RCA")]
    Rca,
    #[serde(rename = "ELK-OPT")]
    ElkOpt,
    #[serde(rename = "ELK-OCA")]
    ElkOca,
    #[serde(rename = "ELK-RCA")]
    ElkRca,
    #[serde(rename = "CLK-OPT")]
    ClkOpt,
    #[serde(rename = "CLK-OCA")]
    ClkOca,
    #[serde(rename = "CLK-RCA")]
    ClkRca,
    #[serde(rename = "ECLK-OCA")]
    EclkOca,
    #[serde(rename = "ECLK-RCA")]
    EclkRca,
}

/// How a scheme picks its actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    /// Interpolated policy-iteration table.
    Optimal(Lookahead),
    Learning(AgentScheme, PolicyKind),
}

impl Scheme {
    pub const ALL: [Scheme; 11] = [
        Scheme::Opt,
        Scheme::Oca,
        Scheme::Rca,
        Scheme::ElkOpt,
        Scheme::ElkOca,
        Scheme::ElkRca,
        Scheme::ClkOpt,
        Scheme::ClkOca,
        Scheme::ClkRca,
        Scheme::EclkOca,
        Scheme::EclkRca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Opt => "OPT",
            Scheme::Oca => "OCA",
            Scheme::Rca => "RCA",
            Scheme::ElkOpt => "ELK-OPT",
            Scheme::ElkOca => "ELK-OCA",
            Scheme::ElkRca => "ELK-RCA",
            Scheme::ClkOpt => "CLK-OPT",
            Scheme::ClkOca => "CLK-OCA",
            Scheme::ClkRca => "CLK-RCA",
            Scheme::EclkOca => "ECLK-OCA",
            Scheme::EclkRca => "ECLK-RCA",
        }
    }

    pub fn kind(self) -> SchemeKind {
        use AgentScheme as A;
        use PolicyKind::{Optimistic as O, Robust as R};
        match self {
            Scheme::Opt => SchemeKind::Optimal(Lookahead::None),
            Scheme::ElkOpt => SchemeKind::Optimal(Lookahead::Energy),
            Scheme::ClkOpt => SchemeKind::Optimal(Lookahead::Channel),
            Scheme::Oca => SchemeKind::Learning(A::Online, O),
            Scheme::Rca => SchemeKind::Learning(A::Online, R),
            Scheme::ElkOca => SchemeKind::Learning(A::Elk, O),
            Scheme::ElkRca => SchemeKind::Learning(A::Elk, R),
            Scheme::ClkOca => SchemeKind::Learning(A::Clk, O),
            Scheme::ClkRca => SchemeKind::Learning(A::Clk, R),
            Scheme::EclkOca => SchemeKind::Learning(A::Eclk, O),
            Scheme::EclkRca => SchemeKind::Learning(A::Eclk, R),
        }
    }

    /// The optimal scheme with the same lookahead, against which the
    /// performance loss is measured. Combined lookahead has none.
    pub fn baseline(self) -> Option<Scheme> {
        match self {
            Scheme::Opt | Scheme::Oca | Scheme::Rca => Some(Scheme::Opt),
            Scheme::ElkOpt | Scheme::ElkOca | Scheme::ElkRca => Some(Scheme::ElkOpt),
            Scheme::ClkOpt | Scheme::ClkOca | Scheme::ClkRca => Some(Scheme::ClkOpt),
            Scheme::EclkOca | Scheme::EclkRca => None,
        }
    }

    pub fn is_optimal(self) -> bool {
        matches!(self.kind(), SchemeKind::Optimal(_))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_uppercase().replace('_', "-");
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == t)
            .ok_or_else(|| SimError::Plan(format!("unknown scheme `{s}`")))
    }
}
