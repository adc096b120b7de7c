//! Power control for energy-harvesting transmitters over fading channels.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: battery dynamics, arrival/channel distributions, scenarios.
//! * [`policies`]: clipped affine policies and analytic relative values.
//! * [`rl`]: replay-memory agents that tune the policy parameters online.
//! * [`mdp`]: discretized average-reward MDPs solved by policy iteration.
//! * [`sim`]: episode simulation and evaluation sweeps.

pub mod mdp;
pub mod model;
pub mod policies;
pub mod quadrature;
pub mod rl;
pub mod rng;
pub mod sim;

pub use model::{
    battery_step, clip, mcr, rate, scenario_from, ChannelModel, EnergyArrivalModel, Family,
    ScenarioSpec, SystemState,
};

/// Toolkit version embedded in every emitted artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
