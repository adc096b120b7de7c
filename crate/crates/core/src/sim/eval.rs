use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_episode, Controller, Scheme, SchemeKind, SimEnv, SimError};
use crate::mdp::{cache::solve_cached, GridSpec, Lookahead, PolicySolution, SolveOptions};
use crate::model::{scenario_from, ChannelModel, Family, ScenarioSpec};
use crate::rl::{AgentConfig, AgentState};
use crate::rng::{label_of, stream, substream};

/// Column order of the per-cell CSV.
pub const CSV_COLUMNS: [&str; 9] =
    ["scheme", "family", "nmcr", "nsnr_db", "throughput", "stderr", "g_star", "omf", "loss_pct"];

/// Learning-rate and exploration schedule: the first episode explores with
/// the larger rates, later ones exploit with the smaller rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub first_alpha: f64,
    pub later_alpha: f64,
    pub first_epsilon: f64,
    pub later_epsilon: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { first_alpha: 1e-3, later_alpha: 1e-4, first_epsilon: 0.02, later_epsilon: 0.0 }
    }
}

impl Schedule {
    /// `(α, ε)` for a zero-based episode index.
    pub fn rates(&self, episode: usize) -> (f64, f64) {
        if episode == 0 {
            (self.first_alpha, self.first_epsilon)
        } else {
            (self.later_alpha, self.later_epsilon)
        }
    }
}

/// MDP grid per lookahead mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPreset {
    pub none: GridSpec,
    pub energy: GridSpec,
    pub channel: GridSpec,
}

impl GridPreset {
    pub fn desk() -> Self {
        Self {
            none: GridSpec::desk(Lookahead::None),
            energy: GridSpec::desk(Lookahead::Energy),
            channel: GridSpec::desk(Lookahead::Channel),
        }
    }

    pub fn paper() -> Self {
        Self {
            none: GridSpec::paper(Lookahead::None),
            energy: GridSpec::paper(Lookahead::Energy),
            channel: GridSpec::paper(Lookahead::Channel),
        }
    }

    pub fn get(&self, lookahead: Lookahead) -> GridSpec {
        match lookahead {
            Lookahead::None => self.none,
            Lookahead::Energy => self.energy,
            Lookahead::Channel => self.channel,
        }
    }
}

/// A full evaluation sweep. Initial batteries are uniform on `[0, c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub families: Vec<Family>,
    pub nmcr: Vec<f64>,
    pub nsnr_db: Vec<f64>,
    pub channel: ChannelModel,
    pub schemes: Vec<Scheme>,
    pub episodes: usize,
    pub steps_per_episode: u64,
    pub seed: u64,
    pub agent: AgentConfig,
    pub schedule: Schedule,
    pub grids: GridPreset,
    pub solve: SolveOptions,
    pub cache_dir: Option<PathBuf>,
    /// Share arrival, channel and initial-battery streams across schemes.
    pub common_random_numbers: bool,
    /// Relative standard deviation of lookahead errors; 0 is exact.
    pub lookahead_noise: f64,
}

impl EvalPlan {
    /// Three families × three NMCRs × four NSNRs, 50 episodes of 5000 slots.
    pub fn desk() -> Self {
        Self {
            families: vec![Family::Bernoulli, Family::Exponential, Family::Uniform],
            nmcr: vec![0.1, 0.5, 0.9],
            nsnr_db: vec![0.0, 10.0, 20.0, 30.0],
            channel: ChannelModel::Rayleigh,
            schemes: Scheme::ALL.to_vec(),
            episodes: 50,
            steps_per_episode: 5000,
            seed: 1,
            agent: AgentConfig::default(),
            schedule: Schedule::default(),
            grids: GridPreset::desk(),
            solve: SolveOptions::default(),
            cache_dir: None,
            common_random_numbers: true,
            lookahead_noise: 0.0,
        }
    }

    /// NSNR 0 to 30 dB in 5 dB steps, 1000 episodes of 10⁴ slots.
    pub fn paper() -> Self {
        Self {
            nsnr_db: (0..=6).map(|k| 5.0 * k as f64).collect(),
            episodes: 1000,
            steps_per_episode: 10_000,
            grids: GridPreset::paper(),
            ..Self::desk()
        }
    }

    pub fn scenarios(&self) -> Result<Vec<ScenarioSpec>, SimError> {
        let mut out = Vec::with_capacity(self.families.len() * self.nmcr.len() * self.nsnr_db.len());
        for &family in &self.families {
            for &nmcr in &self.nmcr {
                for &nsnr in &self.nsnr_db {
                    out.push(scenario_from(family, nmcr, nsnr)?.with_channel(self.channel));
                }
            }
        }
        Ok(out)
    }

    /// Adds OPT and every matched baseline that the scheme list needs.
    pub fn with_required_baselines(mut self) -> Self {
        let mut need = vec![Scheme::Opt];
        need.extend(self.schemes.iter().filter_map(|s| s.baseline()));
        for s in need {
            if !self.schemes.contains(&s) {
                self.schemes.push(s);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Plan(m));
        if self.families.is_empty() || self.nmcr.is_empty() || self.nsnr_db.is_empty() {
            return bad("the scenario grid is empty".into());
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected".into());
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("episodes and steps per episode must be at least 1".into());
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return bad(format!("scheme {s} listed twice"));
            }
        }
        if !self.schemes.contains(&Scheme::Opt) {
            return bad("OPT is required to normalize throughputs".into());
        }
        for s in &self.schemes {
            if let Some(b) = s.baseline() {
                if !self.schemes.contains(&b) {
                    return bad(format!("scheme {s} needs its baseline {b}"));
                }
            }
        }
        if !(self.lookahead_noise >= 0.0 && self.lookahead_noise.is_finite()) {
            return bad(format!("lookahead noise must be nonnegative, got {}", self.lookahead_noise));
        }
        self.agent.validate()?;
        for la in [Lookahead::None, Lookahead::Energy, Lookahead::Channel] {
            if self.schemes.iter().any(|s| s.kind() == SchemeKind::Optimal(la)) {
                self.grids.get(la).validate(la)?;
            }
        }
        self.scenarios()?;
        Ok(())
    }
}

/// Outcome of one (scheme, scenario) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scheme: Scheme,
    pub family: Family,
    pub nmcr: f64,
    pub nsnr_db: f64,
    /// Mean reward over all slots and episodes, nats/slot.
    pub throughput: f64,
    /// Standard error over episode means; 0 with a single episode.
    pub stderr: f64,
    pub episodes: usize,
    /// Simulated throughput of OPT on the same scenario.
    pub g_star: Option<f64>,
    pub omf: Option<f64>,
    /// Loss against the lookahead-matched optimal scheme, in percent.
    pub loss_pct: Option<f64>,
}

impl CellResult {
    /// Fields in [`CSV_COLUMNS`] order; absent values are empty.
    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.scheme.to_string(),
            self.family.to_string(),
            self.nmcr.to_string(),
            self.nsnr_db.to_string(),
            self.throughput.to_string(),
            self.stderr.to_string(),
            opt(self.g_star),
            opt(self.omf),
            opt(self.loss_pct),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub scheme: Scheme,
    pub scenario: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub scheme: Scheme,
    pub average: f64,
    pub maximum: f64,
    pub cells: usize,
}

/// Gain reported by policy iteration for one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiGain {
    pub scenario: String,
    pub lookahead: Lookahead,
    pub gain: f64,
    pub iterations: usize,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<CellResult>,
    pub losses: Vec<LossSummary>,
    pub pi_gains: Vec<PiGain>,
    pub failures: Vec<CellFailure>,
}

impl EvalReport {
    pub fn cell(&self, scheme: Scheme, family: Family, nmcr: f64, nsnr_db: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.scheme == scheme && c.family == family && c.nmcr == nmcr && c.nsnr_db == nsnr_db)
    }
}

/// Average and maximum loss per learning scheme over the cells that have a
/// matched baseline. Losses are not clamped at zero.
pub fn performance_loss(report: &EvalReport) -> Vec<LossSummary> {
    let mut acc: BTreeMap<Scheme, Vec<f64>> = BTreeMap::new();
    for c in &report.cells {
        if let (Some(l), false) = (c.loss_pct, c.scheme.is_optimal()) {
            acc.entry(c.scheme).or_default().push(l);
        }
    }
    acc.into_iter()
        .map(|(scheme, v)| LossSummary {
            scheme,
            average: v.iter().sum::<f64>() / v.len() as f64,
            maximum: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            cells: v.len(),
        })
        .collect()
}

struct CellStats {
    throughput: f64,
    stderr: f64,
}

fn summarize(means: &[f64]) -> CellStats {
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let stderr = if means.len() > 1 {
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    CellStats { throughput: mean, stderr }
}

fn run_cell(
    plan: &EvalPlan,
    scenario: &ScenarioSpec,
    scheme: Scheme,
    table: Option<&PolicySolution>,
) -> Result<CellStats, SimError> {
    let scenario_label = label_of(&scenario.key());
    let scheme_label = label_of(scheme.as_str());
    let salt = if plan.common_random_numbers { 0 } else { scheme_label };
    let mut rng = substream(plan.seed, &[scenario_label, scheme_label, stream::AGENT]);
    let mut agent = match scheme.kind() {
        SchemeKind::Learning(a, k) => Some(AgentState::new(a, k, plan.agent, scenario.capacity)?),
        SchemeKind::Optimal(_) => None,
    };
    let mut means = Vec::with_capacity(plan.episodes);
    for ep in 0..plan.episodes {
        let mut env = SimEnv::for_episode(scenario, plan.seed, scenario_label, ep as u64, salt);
        if plan.lookahead_noise > 0.0 {
            let noise = substream(plan.seed, &[scenario_label, salt, ep as u64, stream::LOOKAHEAD_NOISE]);
            env = env.with_lookahead_noise(plan.lookahead_noise, noise);
        }
        let mut controller = match (&mut agent, table) {
            (Some(a), _) => {
                let (alpha, eps) = plan.schedule.rates(ep);
                a.set_rates(alpha, alpha, alpha, eps);
                Controller::Agent(a)
            }
            (None, Some(t)) => Controller::Table(t),
            (None, None) => return Err(SimError::Plan(format!("no policy table for {scheme}"))),
        };
        means.push(run_episode(&mut env, &mut controller, plan.steps_per_episode, true, &mut rng, None)?);
    }
    Ok(summarize(&means))
}

/// Runs every (scheme, scenario) cell of the plan. Baselines are solved on
/// demand (or loaded from the plan's cache directory); cells run in
/// parallel on the current rayon pool, and a failed cell is recorded in
/// the report without stopping the sweep.
pub fn evaluate(plan: &EvalPlan) -> Result<EvalReport, SimError> {
    plan.validate()?;
    let scenarios = plan.scenarios()?;
    let modes: Vec<Lookahead> = [Lookahead::None, Lookahead::Energy, Lookahead::Channel]
        .into_iter()
        .filter(|&la| plan.schemes.iter().any(|s| s.kind() == SchemeKind::Optimal(la)))
        .collect();

    let jobs: Vec<(usize, Lookahead)> =
        (0..scenarios.len()).flat_map(|i| modes.iter().map(move |&la| (i, la))).collect();
    let solved: Vec<_> = jobs
        .par_iter()
        .map(|&(i, la)| {
            let r = solve_cached(plan.cache_dir.as_deref(), &scenarios[i], plan.grids.get(la), la, &plan.solve);
            match &r {
                Ok((s, hit)) => log::info!(
                    "{} {}: gain {:.6} ({} iterations{})",
                    scenarios[i].label(),
                    la.as_str(),
                    s.gain,
                    s.iterations,
                    if *hit { ", cached" } else { "" }
                ),
                Err(e) => log::error!("{} {}: {e}", scenarios[i].label(), la.as_str()),
            }
            r
        })
        .collect();
    let mut tables: BTreeMap<(usize, Lookahead), Result<PolicySolution, String>> = BTreeMap::new();
    let mut pi_gains = Vec::new();
    for (&(i, la), r) in jobs.iter().zip(solved) {
        match r {
            Ok((s, cached)) => {
                pi_gains.push(PiGain {
                    scenario: scenarios[i].label(),
                    lookahead: la,
                    gain: s.gain,
                    iterations: s.iterations,
                    cached,
                });
                tables.insert((i, la), Ok(s));
            }
            Err(e) => {
                tables.insert((i, la), Err(e.to_string()));
            }
        }
    }

    let cells: Vec<(usize, Scheme)> =
        (0..scenarios.len()).flat_map(|i| plan.schemes.iter().map(move |&s| (i, s))).collect();
    let outcomes: Vec<Result<CellStats, String>> = cells
        .par_iter()
        .map(|&(i, scheme)| {
            let table = match scheme.kind() {
                SchemeKind::Optimal(la) => match &tables[&(i, la)] {
                    Ok(t) => Some(t),
                    Err(e) => return Err(format!("baseline unavailable: {e}")),
                },
                SchemeKind::Learning(..) => None,
            };
            let r = run_cell(plan, &scenarios[i], scheme, table).map_err(|e| e.to_string());
            match &r {
                Ok(s) => log::info!("{} {scheme}: {:.6} ± {:.6}", scenarios[i].label(), s.throughput, s.stderr),
                Err(e) => log::error!("{} {scheme}: {e}", scenarios[i].label()),
            }
            r
        })
        .collect();

    let throughput = |i: usize, s: Scheme| -> Option<f64> {
        let k = cells.iter().position(|&c| c == (i, s))?;
        outcomes[k].as_ref().ok().map(|c| c.throughput)
    };
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (&(i, scheme), outcome) in cells.iter().zip(&outcomes) {
        let sc = &scenarios[i];
        match outcome {
            Ok(stats) => {
                let g_star = throughput(i, Scheme::Opt);
                let base = scheme.baseline().and_then(|b| throughput(i, b));
                results.push(CellResult {
                    scheme,
                    family: sc.family,
                    nmcr: sc.nmcr,
                    nsnr_db: sc.nsnr_db,
                    throughput: stats.throughput,
                    stderr: stats.stderr,
                    episodes: plan.episodes,
                    g_star,
                    omf: g_star.map(|g| stats.throughput / g),
                    loss_pct: base.map(|b| 100.0 * (1.0 - stats.throughput / b)),
                });
            }
            Err(e) => failures.push(CellFailure { scheme, scenario: sc.label(), error: e.clone() }),
        }
    }
    let mut report = EvalReport { cells: results, losses: Vec::new(), pi_gains, failures };
    report.losses = performance_loss(&report);
    Ok(report)
}
