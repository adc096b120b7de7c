use ehpc::model::{scenario_from, Family, SystemState};
use ehpc::rl::{AgentConfig, AgentScheme, AgentState, PolicyKind};
use ehpc::rng::substream;
use ehpc::sim::{evaluate, run_episode, Controller, EvalPlan, GridPreset, Scheme, SimEnv};
use ehpc::mdp::GridSpec;

fn small_plan(schemes: Vec<Scheme>, episodes: usize) -> EvalPlan {
    EvalPlan {
        families: vec![Family::Uniform],
        nmcr: vec![0.5],
        nsnr_db: vec![10.0],
        schemes,
        episodes,
        steps_per_episode: 500,
        grids: GridPreset {
            none: GridSpec::new(30, 8, 30, 0),
            energy: GridSpec::new(20, 6, 20, 6),
            channel: GridSpec::new(20, 6, 20, 6),
        },
        ..EvalPlan::desk()
    }
}

#[test]
fn standard_error_shrinks_with_root_episodes() {
    let se = |n| {
        let r = evaluate(&small_plan(vec![Scheme::Opt], n)).unwrap();
        r.cells[0].stderr
    };
    let ratio = se(10) / se(40);
    assert!((ratio - 2.0).abs() <= 0.6, "ratio {ratio}");
}

#[test]
fn battery_stays_feasible_for_every_scheme() {
    // 11 schemes × 2 families × 2 episodes × 25 000 slots ≈ 1.1·10⁶ slots;
    // run_episode aborts on any invariant violation.
    let mut plan = small_plan(Scheme::ALL.to_vec(), 2);
    plan.families = vec![Family::Bernoulli, Family::Exponential];
    plan.steps_per_episode = 25_000;
    let r = evaluate(&plan).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!(r.cells.len(), 22);
}

#[test]
fn common_random_numbers_share_the_environment() {
    let sc = scenario_from(Family::Exponential, 0.5, 10.0).unwrap();
    let half = |s: &SystemState| 0.5 * s.battery;
    let mut trace = Vec::new();
    let mut env = SimEnv::for_episode(&sc, 9, 42, 3, 0);
    run_episode(&mut env, &mut Controller::Fixed(&half), 200, false, &mut substream(0, &[]), Some(&mut trace))
        .unwrap();
    let mut agent =
        AgentState::new(AgentScheme::Online, PolicyKind::Optimistic, AgentConfig::default(), sc.capacity).unwrap();
    let mut other = Vec::new();
    let mut env = SimEnv::for_episode(&sc, 9, 42, 3, 0);
    run_episode(&mut env, &mut Controller::Agent(&mut agent), 200, true, &mut substream(1, &[]), Some(&mut other))
        .unwrap();
    let arrivals = |t: &[ehpc::sim::TraceRow]| t.iter().map(|r| (r.arrival, r.gamma)).collect::<Vec<_>>();
    assert_eq!(trace[0].battery, other[0].battery);
    assert_eq!(arrivals(&trace), arrivals(&other));
}
