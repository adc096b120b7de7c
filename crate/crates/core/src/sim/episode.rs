use rand::Rng;

use super::{SimEnv, SimError};
use crate::mdp::{evaluate_policy_table, PolicySolution};
use crate::model::SystemState;
use crate::rl::{AgentState, Environment};

/// Decision rule driven through an episode.
pub enum Controller<'a> {
    /// Learning (or frozen) agent.
    Agent(&'a mut AgentState),
    /// Interpolated policy-iteration table.
    Table(&'a PolicySolution),
    /// Any fixed state-feedback rule.
    Fixed(&'a dyn Fn(&SystemState) -> f64),
}

/// One simulated slot, for replay checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub battery: f64,
    pub gamma: f64,
    pub arrival: f64,
    pub action: f64,
    pub reward: f64,
}

/// Runs `steps` slots and returns the time-average reward. With `learning`
/// set, an agent controller runs its full update after every slot and
/// otherwise only acts. `rng` drives exploration and minibatch sampling.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut SimEnv,
    controller: &mut Controller<'_>,
    steps: u64,
    learning: bool,
    rng: &mut R,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<f64, SimError> {
    if steps == 0 {
        return Err(SimError::Plan("an episode needs at least one step".into()));
    }
    let c = env.capacity();
    let mut total = 0.0;
    for _ in 0..steps {
        let state = env.state();
        let action = match controller {
            Controller::Agent(agent) => agent.act(&state, rng)?,
            Controller::Table(sol) => evaluate_policy_table(sol, &state)?,
            Controller::Fixed(f) => f(&state),
        };
        let slot = env.slot();
        if !(action >= 0.0 && action <= state.battery) {
            return Err(SimError::Invariant {
                step: slot,
                detail: format!("action {action} outside [0, {}] (γ = {})", state.battery, state.gamma),
            });
        }
        let arrival = env.arrival();
        let reward = env.step(action).map_err(|e| SimError::Invariant {
            step: slot,
            detail: format!("{e} (battery {}, action {action}, arrival {arrival})", state.battery),
        })?;
        let next = env.state();
        if !(0.0..=c).contains(&next.battery) {
            return Err(SimError::Invariant {
                step: slot,
                detail: format!("battery {} outside [0, {c}]", next.battery),
            });
        }
        if learning {
            if let Controller::Agent(agent) = controller {
                agent.learn(&state, action, reward, &next, rng);
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow { battery: state.battery, gamma: state.gamma, arrival, action, reward });
        }
        total += reward;
    }
    Ok(total / steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{battery_step, rate, scenario_from, ChannelModel, Family};
    use crate::rl::{AgentConfig, AgentScheme, PolicyKind};
    use crate::rng::substream;

    fn deterministic(family: Family, nmcr: f64, nsnr: f64) -> crate::model::ScenarioSpec {
        scenario_from(family, nmcr, nsnr).unwrap().with_channel(ChannelModel::Deterministic { gamma: 1.0 })
    }

    #[test]
    fn clipped_greedy_one_point_reaches_rate_of_mean() {
        let sc = deterministic(Family::OnePoint, 0.3, 10.0);
        let e = sc.arrival.mean();
        let greedy = move |s: &SystemState| s.battery.min(e);
        let mut env = SimEnv::for_episode(&sc, 7, 1, 0, 0);
        let mut rng = substream(7, &[9]);
        let g = run_episode(&mut env, &mut Controller::Fixed(&greedy), 100_000, false, &mut rng, None).unwrap();
        let expected = e.ln_1p();
        assert!((g - expected).abs() < 1e-3, "{g} vs {expected}");
    }

    #[test]
    fn zero_action_earns_nothing() {
        let sc = scenario_from(Family::Exponential, 0.5, 10.0).unwrap();
        let zero = |_: &SystemState| 0.0;
        let mut env = SimEnv::for_episode(&sc, 1, 2, 0, 0);
        let mut rng = substream(1, &[3]);
        let g = run_episode(&mut env, &mut Controller::Fixed(&zero), 1000, false, &mut rng, None).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn fixed_seed_replays_bitwise() {
        let sc = scenario_from(Family::Uniform, 0.5, 10.0).unwrap();
        let run = || {
            let mut agent =
                AgentState::new(AgentScheme::Online, PolicyKind::Robust, AgentConfig::default(), sc.capacity)
                    .unwrap();
            let mut env = SimEnv::for_episode(&sc, 11, 5, 0, 0);
            let mut rng = substream(11, &[4]);
            let mut trace = Vec::new();
            let g = run_episode(&mut env, &mut Controller::Agent(&mut agent), 2000, true, &mut rng, Some(&mut trace))
                .unwrap();
            (g.to_bits(), trace.iter().map(|r| (r.action.to_bits(), r.reward.to_bits())).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trace_follows_battery_recursion() {
        let sc = scenario_from(Family::Bernoulli, 0.5, 0.0).unwrap();
        let half = |s: &SystemState| 0.5 * s.battery;
        let mut env = SimEnv::for_episode(&sc, 3, 1, 0, 0);
        let mut rng = substream(3, &[1]);
        let mut trace = Vec::new();
        run_episode(&mut env, &mut Controller::Fixed(&half), 500, false, &mut rng, Some(&mut trace)).unwrap();
        for w in trace.windows(2) {
            let b = battery_step(w[0].battery, w[0].action, w[0].arrival, sc.capacity).unwrap();
            assert_eq!(b, w[1].battery);
            assert_eq!(w[0].reward, rate(w[0].gamma * w[0].action).unwrap());
        }
    }

    #[test]
    fn overspending_is_reported() {
        let sc = scenario_from(Family::Uniform, 0.5, 10.0).unwrap();
        let greedy_plus = |s: &SystemState| s.battery + 1.0;
        let mut env = SimEnv::for_episode(&sc, 3, 1, 0, 0);
        let mut rng = substream(3, &[1]);
        let err = run_episode(&mut env, &mut Controller::Fixed(&greedy_plus), 10, false, &mut rng, None);
        assert!(matches!(err, Err(SimError::Invariant { step: 0, .. })));
    }
}
