use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{battery_step, rate, ModelError, ScenarioSpec, SystemState};
use crate::rl::Environment;
use crate::rng::{stream, substream, StreamRng};

/// Simulated transmitter. The arrival of the current slot and the channel
/// of the next slot are drawn in advance, so lookahead is exact (unless a
/// noise level is set) and the random streams do not depend on the actions.
#[derive(Debug, Clone)]
pub struct SimEnv {
    scenario: ScenarioSpec,
    battery: f64,
    gamma: f64,
    arrival: f64,
    next_gamma: f64,
    arrivals: StreamRng,
    channel: StreamRng,
    noise: Option<(f64, StreamRng)>,
    lookahead_energy: f64,
    lookahead_gamma: f64,
    slot: u64,
}

impl SimEnv {
    pub fn new(scenario: &ScenarioSpec, initial_battery: f64, mut arrivals: StreamRng, mut channel: StreamRng) -> Self {
        let gamma = scenario.channel.sample(&mut channel);
        let next_gamma = scenario.channel.sample(&mut channel);
        let arrival = scenario.arrival.sample(&mut arrivals);
        Self {
            scenario: *scenario,
            battery: initial_battery.clamp(0.0, scenario.capacity),
            gamma,
            arrival,
            next_gamma,
            arrivals,
            channel,
            noise: None,
            lookahead_energy: arrival,
            lookahead_gamma: next_gamma,
            slot: 0,
        }
    }

    /// Environment for one episode. The streams depend on the seed, the
    /// scenario, the episode and `salt` only; the initial battery is uniform
    /// on `[0, c]`.
    pub fn for_episode(scenario: &ScenarioSpec, seed: u64, scenario_label: u64, episode: u64, salt: u64) -> Self {
        let path = |kind| [scenario_label, salt, episode, kind];
        let b0 = substream(seed, &path(stream::INITIAL_BATTERY)).random::<f64>() * scenario.capacity;
        Self::new(
            scenario,
            b0,
            substream(seed, &path(stream::ARRIVALS)),
            substream(seed, &path(stream::CHANNEL)),
        )
    }

    /// Multiplicative Gaussian error on the reported lookahead values, with
    /// relative standard deviation `level`.
    pub fn with_lookahead_noise(mut self, level: f64, rng: StreamRng) -> Self {
        if level > 0.0 {
            self.noise = Some((level, rng));
            self.refresh_lookahead();
        }
        self
    }

    fn refresh_lookahead(&mut self) {
        self.lookahead_energy = self.arrival;
        self.lookahead_gamma = self.next_gamma;
        if let Some((level, rng)) = &mut self.noise {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            self.lookahead_energy = (self.arrival * (1.0 + *level * a)).max(0.0);
            self.lookahead_gamma = (self.next_gamma * (1.0 + *level * b)).max(0.0);
        }
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.scenario
    }

    pub fn battery(&self) -> f64 {
        self.battery
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Energy that arrives during the current slot.
    pub fn arrival(&self) -> f64 {
        self.arrival
    }
}

impl Environment for SimEnv {
    fn capacity(&self) -> f64 {
        self.scenario.capacity
    }

    fn state(&self) -> SystemState {
        SystemState {
            battery: self.battery,
            gamma: self.gamma,
            lookahead_energy: Some(self.lookahead_energy),
            lookahead_gamma: Some(self.lookahead_gamma),
        }
    }

    fn step(&mut self, action: f64) -> Result<f64, ModelError> {
        let reward = rate(self.gamma * action)?;
        self.battery = battery_step(self.battery, action, self.arrival, self.scenario.capacity)?;
        self.gamma = self.next_gamma;
        self.next_gamma = self.scenario.channel.sample(&mut self.channel);
        self.arrival = self.scenario.arrival.sample(&mut self.arrivals);
        self.refresh_lookahead();
        self.slot += 1;
        Ok(reward)
    }
}
