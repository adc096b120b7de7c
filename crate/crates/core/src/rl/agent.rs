use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::Adam;
use super::reparam::ReparamVars;
use super::replay::{ReplayMemory, Transition};
use super::Environment;
use crate::model::{ModelError, SystemState};
use crate::policies::{
    optimistic_policy, rel_value, rel_value_partials, robust_policy, OptimisticParams,
    RelValueParams, RobustParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("scheme {scheme} needs the {field} lookahead in the observed state")]
    MissingLookahead { scheme: AgentScheme, field: &'static str },
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which lookahead information the agent consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgentScheme {
    Online,
    Elk,
    Clk,
    Eclk,
}

impl AgentScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentScheme::Online => "ONLINE",
            AgentScheme::Elk => "ELK",
            AgentScheme::Clk => "CLK",
            AgentScheme::Eclk => "ECLK",
        }
    }

    pub fn uses_energy_lookahead(self) -> bool {
        matches!(self, AgentScheme::Elk | AgentScheme::Eclk)
    }

    pub fn uses_channel_lookahead(self) -> bool {
        matches!(self, AgentScheme::Clk | AgentScheme::Eclk)
    }
}

impl fmt::Display for AgentScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentScheme {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ONLINE" => Ok(AgentScheme::Online),
            "ELK" => Ok(AgentScheme::Elk),
            "CLK" => Ok(AgentScheme::Clk),
            "ECLK" => Ok(AgentScheme::Eclk),
            _ => Err(AgentError::Config(format!("unknown agent scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Optimistic,
    Robust,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Optimistic => "optimistic",
            PolicyKind::Robust => "robust",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "optimistic" => Ok(PolicyKind::Optimistic),
            "robust" => Ok(PolicyKind::Robust),
            _ => Err(AgentError::Config(format!("unknown policy kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Step size of the relative-value regression.
    pub alpha1: f64,
    /// Step size of the throughput estimate.
    pub alpha2: f64,
    /// Step size of the auxiliary `e`/`ĉ`/`p` estimates.
    pub alpha3: f64,
    pub memory_capacity: usize,
    pub minibatch: usize,
    pub epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub initial_q: f64,
    /// `γ̂`, or `γ̂₀` for channel-lookahead agents.
    pub initial_gamma_hat: f64,
    /// Initial slope `s` of channel-lookahead agents. Zero freezes the slope
    /// (its gradient vanishes through the softplus map), so the default is a
    /// small positive value.
    pub initial_slope: f64,
    pub initial_g_hat: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha1: 1e-3,
            alpha2: 1e-3,
            alpha3: 1e-3,
            memory_capacity: 128,
            minibatch: 64,
            epsilon: 0.02,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            initial_q: 0.5,
            initial_gamma_hat: 1.0,
            initial_slope: 1e-3,
            initial_g_hat: 0.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("{name} must be a nonnegative finite rate, got {a}"));
            }
        }
        if self.memory_capacity == 0 || self.minibatch == 0 {
            return bad("memory capacity and minibatch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam decay rates must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if !(self.initial_q > 0.0 && self.initial_q < 1.0) {
            return bad(format!("initial q must lie in (0, 1), got {}", self.initial_q));
        }
        if !(self.initial_gamma_hat > 0.0) || !(self.initial_slope >= 0.0) {
            return bad("initial SNR coefficients must be positive (slope nonnegative)".into());
        }
        if !(self.initial_g_hat >= 0.0) {
            return bad("initial throughput estimate must be nonnegative".into());
        }
        if self.minibatch > self.memory_capacity {
            log::warn!(
                "minibatch size {} exceeds replay capacity {}",
                self.minibatch,
                self.memory_capacity
            );
        }
        Ok(())
    }
}

/// Running estimates that feed the policy's `e` or `p`. Energy-lookahead
/// agents overwrite them every slot with the value read from the lookahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AuxEstimates {
    Optimistic { e: f64, c_hat: f64 },
    Robust { p: f64 },
}

/// Mutable state of one learning agent.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub scheme: AgentScheme,
    pub kind: PolicyKind,
    pub config: AgentConfig,
    pub capacity: f64,
    pub reparam: ReparamVars,
    pub g_hat: f64,
    pub aux: AuxEstimates,
    pub memory: ReplayMemory,
    pub adam: Adam,
    pub steps: u64,
    batch: Vec<Transition>,
}

impl AgentState {
    pub fn new(
        scheme: AgentScheme,
        kind: PolicyKind,
        config: AgentConfig,
        capacity: f64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(AgentError::Config(format!("capacity must be positive, got {capacity}")));
        }
        let reparam = if scheme.uses_channel_lookahead() {
            ReparamVars::extended(config.initial_q, config.initial_gamma_hat, config.initial_slope)
        } else {
            ReparamVars::basic(config.initial_q, config.initial_gamma_hat)
        };
        let aux = match kind {
            PolicyKind::Optimistic => AuxEstimates::Optimistic { e: 0.0, c_hat: 0.0 },
            PolicyKind::Robust => AuxEstimates::Robust { p: 0.0 },
        };
        let adam = Adam::new(reparam.theta.len(), config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Self {
            scheme,
            kind,
            config,
            capacity,
            reparam,
            g_hat: config.initial_g_hat,
            aux,
            memory: ReplayMemory::new(config.memory_capacity),
            adam,
            steps: 0,
            batch: Vec::with_capacity(config.minibatch),
        })
    }

    /// Learning-rate and exploration schedule hook.
    pub fn set_rates(&mut self, alpha1: f64, alpha2: f64, alpha3: f64, epsilon: f64) {
        self.config.alpha1 = alpha1;
        self.config.alpha2 = alpha2;
        self.config.alpha3 = alpha3;
        self.config.epsilon = epsilon;
    }

    /// SNR coefficient of the relative value for a slot with channel `gamma`.
    fn gamma_eff(&self, gamma: f64) -> f64 {
        if self.reparam.is_extended() {
            self.reparam.slope() * gamma + self.reparam.gamma_hat()
        } else {
            self.reparam.gamma_hat()
        }
    }

    fn rel_params(&self, gamma: f64) -> RelValueParams {
        RelValueParams { q: self.reparam.q(), gamma_hat: self.gamma_eff(gamma) }
    }

    /// Relative value of battery `b` entering a slot with channel `gamma`
    /// (the channel is ignored by agents without channel lookahead).
    pub fn rel_value(&self, b: f64, gamma: f64) -> f64 {
        rel_value(b, self.rel_params(gamma))
    }

    /// Current `(q, γ̂ or γ̂₀, s)`, with `s = 0` for basic agents.
    fn coefficients(&self) -> (f64, f64, f64) {
        let s = if self.reparam.is_extended() { self.reparam.slope() } else { 0.0 };
        (self.reparam.q(), self.reparam.gamma_hat(), s)
    }

    fn transition_value(&self, t: &Transition) -> (f64, f64) {
        let (q, g0, s) = self.coefficients();
        let v = |b: f64, gamma: f64| rel_value(b, RelValueParams { q, gamma_hat: s * gamma + g0 });
        match *t {
            Transition::Basic { battery, next_battery, .. } => (v(battery, 0.0), v(next_battery, 0.0)),
            Transition::WithGamma { battery, gamma, next_battery, next_gamma, .. } => {
                (v(battery, gamma), v(next_battery, next_gamma))
            }
        }
    }

    /// The `e` or `p` the policy uses in `state`.
    fn policy_estimate(&self, state: &SystemState) -> Result<f64, AgentError> {
        if self.scheme.uses_energy_lookahead() {
            let e = state.lookahead_energy.ok_or(AgentError::MissingLookahead {
                scheme: self.scheme,
                field: "energy",
            })?;
            let clipped = e.min(self.capacity);
            return Ok(match self.kind {
                PolicyKind::Optimistic => clipped,
                PolicyKind::Robust => clipped / self.capacity,
            });
        }
        Ok(match self.aux {
            AuxEstimates::Optimistic { e, .. } => e,
            AuxEstimates::Robust { p } => p,
        })
    }

    fn policy_gamma_hat(&self, state: &SystemState) -> Result<f64, AgentError> {
        if self.scheme.uses_channel_lookahead() {
            let g = state.lookahead_gamma.ok_or(AgentError::MissingLookahead {
                scheme: self.scheme,
                field: "channel",
            })?;
            Ok(self.gamma_eff(g))
        } else {
            Ok(self.reparam.gamma_hat())
        }
    }

    /// Greedy action of the current clipped affine policy.
    pub fn policy_action(&self, state: &SystemState) -> Result<f64, AgentError> {
        let b = state.battery;
        let est = self.policy_estimate(state)?;
        let gamma_hat = self.policy_gamma_hat(state)?;
        let q = self.reparam.q();
        let u = match self.kind {
            PolicyKind::Optimistic => optimistic_policy(
                b,
                state.gamma,
                self.capacity,
                OptimisticParams { e: est, q, gamma_hat },
            ),
            PolicyKind::Robust => {
                robust_policy(b, state.gamma, RobustParams { p: est, q, gamma_hat })
            }
        };
        Ok(u.max(0.0).min(b))
    }

    /// ε-greedy action: the policy action, or with probability ε a uniform
    /// draw on `[0, B]`.
    pub fn act<R: Rng + ?Sized>(&self, state: &SystemState, rng: &mut R) -> Result<f64, AgentError> {
        let u = self.policy_action(state)?;
        if self.config.epsilon > 0.0 && rng.random::<f64>() < self.config.epsilon {
            return Ok(state.battery * rng.random::<f64>());
        }
        Ok(u)
    }

    /// Temporal-difference update of the throughput estimate.
    pub fn td_step(&mut self, t: &Transition) -> f64 {
        let (h, h_next) = self.transition_value(t);
        let delta = t.reward() - self.g_hat + h_next - h;
        self.g_hat += self.config.alpha2 * delta;
        self.g_hat
    }

    /// Moving-average update of `e`/`ĉ` or `p` from one observed transition
    /// with executed action `u`.
    pub fn update_aux(&mut self, b: f64, b_next: f64, u: f64) {
        let a = self.config.alpha3;
        let energy = b_next - b + u;
        let room = self.capacity - b + u;
        match &mut self.aux {
            AuxEstimates::Optimistic { e, c_hat } => {
                if room >= *c_hat {
                    *e += a * (energy - *e);
                }
                *c_hat += a * (room - *c_hat);
                *e = e.clamp(0.0, self.capacity);
            }
            AuxEstimates::Robust { p } => {
                // With no room left the harvested energy is zero by
                // construction, so the sample carries no information.
                if room > 0.0 {
                    *p += a * (energy / room - *p);
                    *p = p.clamp(0.0, 1.0);
                }
            }
        }
    }

    /// Regression targets `H_i = R_i − ĝ + ĥ(B'_i)` at the current parameters.
    pub fn minibatch_targets(&self, batch: &[Transition]) -> Vec<f64> {
        let (q, g0, s) = self.coefficients();
        batch
            .iter()
            .map(|t| {
                let gamma = t.gammas().map(|g| g.1).unwrap_or(0.0);
                t.reward() - self.g_hat + rel_value(t.next_battery(), RelValueParams { q, gamma_hat: s * gamma + g0 })
            })
            .collect()
    }

    /// Gradient in θ of `(1/2N) Σ (H_i − ĥ(B_i))²` with the targets held fixed.
    pub fn minibatch_grad(&self, batch: &[Transition], targets: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.reparam.theta.len()];
        if batch.is_empty() {
            return grad;
        }
        let (q, g0, s) = self.coefficients();
        let mut gq = 0.0;
        let mut gg = 0.0;
        let mut gs = 0.0;
        for (t, &target) in batch.iter().zip(targets) {
            let gamma = t.gammas().map(|g| g.0).unwrap_or(0.0);
            let params = RelValueParams { q, gamma_hat: s * gamma + g0 };
            let (h, d_q, d_g) = rel_value_partials(t.battery(), params);
            let resid = target - h;
            gq -= resid * d_q;
            gg -= resid * d_g;
            gs -= resid * d_g * gamma;
        }
        let n = batch.len() as f64;
        let jac = self.reparam.jacobian();
        grad[0] = gq / n * jac[0];
        grad[1] = gg / n * jac[1];
        if grad.len() == 3 {
            grad[2] = gs / n * jac[2];
        }
        grad
    }

    pub fn adam_step(&mut self, grad: &[f64]) {
        let lr = self.config.alpha1;
        self.adam.step(&mut self.reparam.theta, grad, lr);
    }

    /// The learning half of one loop body: push, TD update, auxiliary
    /// update, minibatch regression.
    pub fn learn<R: Rng + ?Sized>(
        &mut self,
        state: &SystemState,
        action: f64,
        reward: f64,
        next: &SystemState,
        rng: &mut R,
    ) {
        let t = if self.scheme.uses_channel_lookahead() {
            Transition::WithGamma {
                battery: state.battery,
                gamma: state.gamma,
                reward,
                next_battery: next.battery,
                next_gamma: next.gamma,
            }
        } else {
            Transition::Basic { battery: state.battery, reward, next_battery: next.battery }
        };
        self.memory.push(t);
        self.td_step(&t);
        if self.scheme.uses_energy_lookahead() {
            if let Ok(v) = self.policy_estimate(state) {
                self.aux = match self.aux {
                    AuxEstimates::Optimistic { c_hat, .. } => AuxEstimates::Optimistic { e: v, c_hat },
                    AuxEstimates::Robust { .. } => AuxEstimates::Robust { p: v },
                };
            }
        } else {
            self.update_aux(state.battery, next.battery, action);
        }
        let mut batch = std::mem::take(&mut self.batch);
        self.memory.sample_into(self.config.minibatch, rng, &mut batch);
        if !batch.is_empty() {
            let targets = self.minibatch_targets(&batch);
            let grad = self.minibatch_grad(&batch, &targets);
            self.adam_step(&grad);
        }
        self.batch = batch;
        self.steps += 1;
        debug_assert!(self.parameters_in_range());
    }

    /// One full loop body against `env`; returns the realized reward.
    pub fn agent_step<E: Environment + ?Sized, R: Rng + ?Sized>(
        &mut self,
        env: &mut E,
        rng: &mut R,
    ) -> Result<f64, AgentError> {
        let state = env.state();
        let action = self.act(&state, rng)?;
        let reward = env.step(action)?;
        let next = env.state();
        self.learn(&state, action, reward, &next, rng);
        Ok(reward)
    }

    pub fn parameters_in_range(&self) -> bool {
        let q = self.reparam.q();
        let s_ok = !self.reparam.is_extended() || self.reparam.slope() >= 0.0;
        q > 0.0 && q < 1.0 && self.reparam.gamma_hat() > 0.0 && s_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{battery_step, rate, EnergyArrivalModel};
    use crate::rng::substream;
    use proptest::prelude::*;

    fn agent(scheme: AgentScheme, kind: PolicyKind) -> AgentState {
        AgentState::new(scheme, kind, AgentConfig::default(), 10.0).unwrap()
    }

    /// Independent loss: maps θ by hand and evaluates `log(1 + γ̂qb)/q`.
    fn loss_at(theta: &[f64], batch: &[Transition], targets: &[f64]) -> f64 {
        let q = 1.0 / (1.0 + (-theta[0]).exp());
        let sp = |x: f64| (1.0 + x.exp()).ln();
        let g0 = sp(theta[1]);
        let s = if theta.len() == 3 { sp(theta[2]) } else { 0.0 };
        let n = batch.len() as f64;
        batch
            .iter()
            .zip(targets)
            .map(|(t, &h)| {
                let gamma = t.gammas().map(|g| g.0).unwrap_or(0.0);
                let gh = s * gamma + g0;
                let v = (1.0 + gh * q * t.battery()).ln() / q;
                (h - v).powi(2)
            })
            .sum::<f64>()
            / (2.0 * n)
    }

    fn fd_grad(theta: &[f64], batch: &[Transition], targets: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..theta.len())
            .map(|k| {
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[k] += h;
                dn[k] -= h;
                (loss_at(&up, batch, targets) - loss_at(&dn, batch, targets)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn epsilon_zero_is_the_policy_action() {
        let a = agent(AgentScheme::Online, PolicyKind::Robust);
        let mut rng = substream(1, &[]);
        let s = SystemState::new(4.0, 2.0);
        let u = a.policy_action(&s).unwrap();
        let mut cfg = a.config;
        cfg.epsilon = 0.0;
        let mut a0 = a.clone();
        a0.config = cfg;
        for _ in 0..20 {
            assert_eq!(a0.act(&s, &mut rng).unwrap(), u);
        }
        let empty = SystemState::new(0.0, 2.0);
        assert_eq!(a.act(&empty, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn full_exploration_is_uniform_and_replayable() {
        let mut a = agent(AgentScheme::Online, PolicyKind::Optimistic);
        a.config.epsilon = 1.0 - 1e-15;
        let s = SystemState::new(3.0, 1.0);
        let draw = |seed| {
            let mut rng = substream(seed, &[7]);
            (0..500).map(|_| a.act(&s, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        let x = draw(3);
        assert_eq!(x, draw(3));
        assert!(x.iter().all(|&u| (0.0..=3.0).contains(&u)));
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!((mean - 1.5).abs() < 0.15);
    }

    #[test]
    fn lookahead_schemes_require_their_fields() {
        let s = SystemState::new(1.0, 1.0);
        let mut rng = substream(0, &[]);
        for scheme in [AgentScheme::Elk, AgentScheme::Clk, AgentScheme::Eclk] {
            let a = agent(scheme, PolicyKind::Robust);
            assert!(matches!(a.act(&s, &mut rng), Err(AgentError::MissingLookahead { .. })));
        }
    }

    #[test]
    fn td_step_examples() {
        let mut a = agent(AgentScheme::Online, PolicyKind::Robust);
        a.g_hat = 0.4;
        let t = Transition::Basic { battery: 2.0, reward: 0.4, next_battery: 2.0 };
        assert_eq!(a.td_step(&t), 0.4);
        a.config.alpha2 = 1.0;
        let t = Transition::Basic { battery: 2.0, reward: 0.7, next_battery: 3.0 };
        let expect = 0.7 + a.rel_value(3.0, 0.0) - a.rel_value(2.0, 0.0);
        assert!((a.td_step(&t) - expect).abs() < 1e-15);
    }

    #[test]
    fn aux_update_examples() {
        let mut a = agent(AgentScheme::Online, PolicyKind::Optimistic);
        a.aux = AuxEstimates::Optimistic { e: 1.5, c_hat: 2.0 };
        // E = 5 − 4 + 0.5 = 1.5 = e, C = 10 − 4 + 0.5 ≥ ĉ.
        a.update_aux(4.0, 5.0, 0.5);
        match a.aux {
            AuxEstimates::Optimistic { e, c_hat } => {
                assert_eq!(e, 1.5);
                assert!((c_hat - (2.0 + 1e-3 * 4.5)).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        a.config.alpha3 = 1.0;
        a.update_aux(4.0, 6.0, 1.0);
        assert_eq!(a.aux, AuxEstimates::Optimistic { e: 3.0, c_hat: 7.0 });

        let mut r = agent(AgentScheme::Online, PolicyKind::Robust);
        r.config.alpha3 = 1.0;
        r.update_aux(4.0, 6.0, 1.0);
        assert_eq!(r.aux, AuxEstimates::Robust { p: 3.0 / 7.0 });
        // A full battery with no spending leaves p untouched.
        r.update_aux(10.0, 10.0, 0.0);
        assert_eq!(r.aux, AuxEstimates::Robust { p: 3.0 / 7.0 });
    }

    #[test]
    fn p_estimate_tracks_bernoulli_probability() {
        let c = 10.0;
        let arrivals = EnergyArrivalModel::Bernoulli { prob: 0.3, magnitude: c };
        let mut a = agent(AgentScheme::Online, PolicyKind::Robust);
        let mut rng = substream(11, &[]);
        let mut b: f64 = 0.0;
        for _ in 0..100_000 {
            let u = b * 0.4;
            let e = arrivals.sample(&mut rng);
            let nb = battery_step(b, u, e, c).unwrap();
            a.update_aux(b, nb, u);
            b = nb;
        }
        let AuxEstimates::Robust { p } = a.aux else { unreachable!() };
        assert!((p - 0.3).abs() < 0.02, "p = {p}");
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let a = agent(AgentScheme::Online, PolicyKind::Robust);
        let batch: Vec<_> = (0..5)
            .map(|i| Transition::Basic { battery: i as f64, reward: 0.0, next_battery: 1.0 })
            .collect();
        let targets: Vec<f64> = batch.iter().map(|t| a.rel_value(t.battery(), 0.0)).collect();
        assert!(a.minibatch_grad(&batch, &targets).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_transition_gradient_by_hand() {
        let mut a = agent(AgentScheme::Online, PolicyKind::Robust);
        a.reparam.theta = vec![0.3, -0.2];
        let b: f64 = 2.5;
        let batch = [Transition::Basic { battery: b, reward: 0.9, next_battery: 3.0 }];
        let targets = a.minibatch_targets(&batch);
        let g = a.minibatch_grad(&batch, &targets);
        let q = 1.0 / (1.0 + (-0.3f64).exp());
        let gh = (1.0 + (-0.2f64).exp()).ln();
        let z = gh * q * b;
        let h = (1.0 + z).ln() / q;
        let dh_dq = (z / (1.0 + z) - (1.0 + z).ln()) / (q * q);
        let dh_dg = b / (1.0 + z);
        let resid = targets[0] - h;
        let sig2 = 1.0 / (1.0 + 0.2f64.exp());
        assert!(rel_err(g[0], -resid * dh_dq * q * (1.0 - q)) < 1e-12);
        assert!(rel_err(g[1], -resid * dh_dg * sig2) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_central_differences(
            t1 in -3.0f64..3.0,
            t2 in -2.0f64..2.0,
            t3 in -3.0f64..1.0,
            ghat in 0.0f64..1.0,
            extended in any::<bool>(),
            raw in prop::collection::vec((0.0f64..10.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..10.0, 0.0f64..3.0), 1..16),
        ) {
            let scheme = if extended { AgentScheme::Clk } else { AgentScheme::Online };
            let mut a = agent(scheme, PolicyKind::Optimistic);
            a.reparam.theta = if extended { vec![t1, t2, t3] } else { vec![t1, t2] };
            a.g_hat = ghat;
            let batch: Vec<Transition> = raw
                .iter()
                .map(|&(b, g, r, nb, ng)| {
                    if extended {
                        Transition::WithGamma { battery: b, gamma: g, reward: r, next_battery: nb, next_gamma: ng }
                    } else {
                        Transition::Basic { battery: b, reward: r, next_battery: nb }
                    }
                })
                .collect();
            let targets = a.minibatch_targets(&batch);
            let g = a.minibatch_grad(&batch, &targets);
            let fd = fd_grad(&a.reparam.theta, &batch, &targets);
            for (x, y) in g.iter().zip(&fd) {
                let tol = 1e-5 * x.abs().max(y.abs()) + 1e-9;
                prop_assert!((x - y).abs() <= tol, "analytic {x} vs fd {y}");
            }
        }

        #[test]
        fn parameters_stay_in_range(grads in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6, -1e6f64..1e6), 1..200)) {
            let mut a = agent(AgentScheme::Eclk, PolicyKind::Robust);
            a.config.alpha1 = 0.5;
            for (x, y, z) in grads {
                a.adam_step(&[x, y, z]);
                prop_assert!(a.parameters_in_range());
            }
        }
    }

    struct Fixed {
        b: f64,
        c: f64,
        e: f64,
        gamma: f64,
    }

    impl Environment for Fixed {
        fn capacity(&self) -> f64 {
            self.c
        }
        fn state(&self) -> SystemState {
            SystemState {
                battery: self.b,
                gamma: self.gamma,
                lookahead_energy: Some(self.e),
                lookahead_gamma: Some(self.gamma),
            }
        }
        fn step(&mut self, u: f64) -> Result<f64, ModelError> {
            let r = rate(self.gamma * u)?;
            self.b = battery_step(self.b, u, self.e, self.c)?;
            Ok(r)
        }
    }

    #[test]
    fn zero_rates_change_only_memory_and_steps() {
        let mut a = agent(AgentScheme::Online, PolicyKind::Optimistic);
        a.set_rates(0.0, 0.0, 0.0, 0.0);
        let before = a.clone();
        let mut env = Fixed { b: 3.0, c: 10.0, e: 1.0, gamma: 2.0 };
        let mut rng = substream(0, &[]);
        for _ in 0..5 {
            a.agent_step(&mut env, &mut rng).unwrap();
        }
        assert_eq!(a.reparam, before.reparam);
        assert_eq!(a.g_hat, before.g_hat);
        assert_eq!(a.aux, before.aux);
        assert_eq!(a.memory.len(), 5);
        assert_eq!(a.steps, 5);
    }

    #[test]
    fn energy_lookahead_reads_constant_arrival() {
        let mut a = agent(AgentScheme::Elk, PolicyKind::Optimistic);
        let mut env = Fixed { b: 3.0, c: 10.0, e: 1.25, gamma: 2.0 };
        let mut rng = substream(0, &[]);
        for _ in 0..50 {
            a.agent_step(&mut env, &mut rng).unwrap();
            let AuxEstimates::Optimistic { e, .. } = a.aux else { unreachable!() };
            assert_eq!(e, 1.25);
        }
    }

    #[test]
    fn eclk_with_zero_slope_matches_elk_on_first_step() {
        let mut cfg = AgentConfig { epsilon: 0.0, initial_slope: 0.0, ..AgentConfig::default() };
        cfg.initial_gamma_hat = 1.7;
        let elk = AgentState::new(AgentScheme::Elk, PolicyKind::Robust, cfg, 10.0).unwrap();
        let eclk = AgentState::new(AgentScheme::Eclk, PolicyKind::Robust, cfg, 10.0).unwrap();
        let env = Fixed { b: 6.0, c: 10.0, e: 2.0, gamma: 0.8 };
        let s = env.state();
        assert_eq!(elk.policy_action(&s).unwrap(), eclk.policy_action(&s).unwrap());
    }

    #[test]
    fn online_robust_learns_bernoulli_probability_in_one_episode() {
        use crate::model::{scenario_from, Family};
        let sc = scenario_from(Family::Bernoulli, 0.5, 10.0).unwrap();
        let mut a = AgentState::new(AgentScheme::Online, PolicyKind::Robust, AgentConfig::default(), sc.capacity)
            .unwrap();
        let mut rng = substream(5, &[]);
        let mut b = 0.0;
        let mut gamma = sc.channel.sample(&mut rng);
        for _ in 0..10_000 {
            let s = SystemState::new(b, gamma);
            let u = a.act(&s, &mut rng).unwrap();
            let r = rate(gamma * u).unwrap();
            let nb = battery_step(b, u, sc.arrival.sample(&mut rng), sc.capacity).unwrap();
            gamma = sc.channel.sample(&mut rng);
            let next = SystemState::new(nb, gamma);
            a.learn(&s, u, r, &next, &mut rng);
            b = nb;
        }
        let AuxEstimates::Robust { p } = a.aux else { unreachable!() };
        assert!((p - 0.5).abs() < 0.05, "p = {p}");
    }
}
