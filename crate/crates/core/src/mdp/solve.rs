use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::build::DiscreteMdp;
use super::grid::{bracket, Axis};
use super::{GridSpec, Lookahead, MdpError};
use crate::model::{ScenarioSpec, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Systems with more unknowns than this are evaluated by relative value
    /// iteration instead of a dense solve.
    pub direct_limit: usize,
    pub rvi_tol: f64,
    pub rvi_tau: f64,
    pub rvi_max_iters: usize,
    /// An action is replaced only if another one beats it by more than this
    /// (relative to the magnitude of the Q-values).
    pub tie_tol: f64,
    /// Restart probability used when a policy's chain is not unichain (the
    /// anchored system is singular): the chain is re-evaluated with a jump
    /// to the anchor state at this rate.
    pub singular_reset: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            direct_limit: 4000,
            rvi_tol: 1e-10,
            rvi_tau: 0.5,
            rvi_max_iters: 5_000_000,
            tie_tol: 1e-12,
            singular_reset: 1e-7,
        }
    }
}

/// Converged policy-iteration result on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySolution {
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    pub lookahead: Lookahead,
    pub options: SolveOptions,
    /// Optimal gain of the discretized MDP (nats per slot).
    pub gain: f64,
    pub battery: Vec<f64>,
    pub gamma: Axis,
    pub look: Axis,
    /// Action index per grid state `(i, k, l)`.
    pub action_index: Vec<u32>,
    /// Spent energy per grid state.
    pub actions: Vec<f64>,
    /// Bias per grid state, zero at the empty-battery, lowest-γ state.
    pub bias: Vec<f64>,
    /// Expected bias `H(b_j, κ)` at `[j·classes + κ]`, same anchoring.
    pub expected_bias: Vec<f64>,
    pub iterations: usize,
    pub gain_history: Vec<f64>,
}

impl PolicySolution {
    #[inline]
    pub fn state_index(&self, i: usize, k: usize, l: usize) -> usize {
        (i * self.gamma.len() + k) * self.look.len() + l
    }

    pub fn action_at(&self, i: usize, k: usize, l: usize) -> f64 {
        self.actions[self.state_index(i, k, l)]
    }
}

pub fn gain_of(solution: &PolicySolution) -> f64 {
    solution.gain
}

/// Interpolated action of the tabled policy: multilinear in battery, γ and
/// the lookahead value, clamped to the grid hull on every axis and finally
/// clipped to `[0, B]`.
pub fn evaluate_policy_table(solution: &PolicySolution, state: &SystemState) -> Result<f64, MdpError> {
    let b = state.battery;
    if b <= 0.0 {
        return Ok(0.0);
    }
    let look_value = match solution.lookahead {
        Lookahead::None => 0.0,
        Lookahead::Energy => state
            .lookahead_energy
            .ok_or(MdpError::MissingLookahead("energy"))?
            .min(solution.scenario.capacity),
        Lookahead::Channel => state.lookahead_gamma.ok_or(MdpError::MissingLookahead("channel"))?,
    };
    let (i0, i1, ti) = bracket(&solution.battery, b);
    let (k0, k1, tk) = bracket(&solution.gamma.nodes, state.gamma);
    let (l0, l1, tl) = bracket(&solution.look.nodes, look_value);
    let mut u = 0.0;
    for (i, wi) in [(i0, 1.0 - ti), (i1, ti)] {
        if wi == 0.0 {
            continue;
        }
        for (k, wk) in [(k0, 1.0 - tk), (k1, tk)] {
            if wk == 0.0 {
                continue;
            }
            for (l, wl) in [(l0, 1.0 - tl), (l1, tl)] {
                if wl == 0.0 {
                    continue;
                }
                u += wi * wk * wl * solution.action_at(i, k, l);
            }
        }
    }
    Ok(u.clamp(0.0, b))
}

/// Expected one-step reward and sparse transition rows of the reduced
/// system `H = r̄ − g + P̄H` under `policy`.
fn policy_system(mdp: &DiscreteMdp, policy: &[u32]) -> (Vec<f64>, Vec<Vec<(usize, f64)>>) {
    let ncls = mdp.n_classes();
    let n = mdp.n_battery() * ncls;
    let contexts: Vec<_> = (0..ncls).map(|c| mdp.contexts_of_class(c)).collect();
    let rows: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
        .into_par_iter()
        .map(|row| {
            let (i, class) = (row / ncls, row % ncls);
            let mut r = 0.0;
            let mut dense = vec![0.0; n];
            let mut buf = Vec::new();
            for &(k, l, rho) in &contexts[class] {
                let j = policy[mdp.state_index(i, k, l)] as usize;
                r += rho * mdp.reward(i, j, k);
                let next = mdp.next_class(l);
                mdp.successors(i, j, l, &mut buf);
                for &(jn, w) in &buf {
                    dense[jn * ncls + next] += rho * w;
                }
            }
            let sparse = dense.iter().enumerate().filter(|x| *x.1 != 0.0).map(|(c, &w)| (c, w)).collect();
            (r, sparse)
        })
        .collect();
    rows.into_iter().unzip()
}

/// Gain and anchored `H` of a fixed policy.
fn evaluate(
    mdp: &DiscreteMdp,
    policy: &[u32],
    options: &SolveOptions,
    warm: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), MdpError> {
    let (rbar, mut rows) = policy_system(mdp, policy);
    let n = rbar.len();
    if n > options.direct_limit {
        return relative_value_iteration(&rbar, &rows, options, warm);
    }
    if let Some(x) = direct_solve(&rbar, &rows) {
        return Ok(x);
    }
    let delta = options.singular_reset;
    log::debug!("policy chain is not unichain; evaluating with restart rate {delta}");
    for row in &mut rows {
        row.iter_mut().for_each(|e| e.1 *= 1.0 - delta);
        row.push((0, delta));
    }
    direct_solve(&rbar, &rows).ok_or_else(|| MdpError::Evaluation("singular evaluation system".into()))
}

/// Dense solve of `(I − P̄)H + g = r̄` with `H(0) = 0`; `None` when the
/// system is numerically singular.
fn direct_solve(rbar: &[f64], rows: &[Vec<(usize, f64)>]) -> Option<(f64, Vec<f64>)> {
    let n = rbar.len();
    // Unknowns: g in slot 0 (the anchor H(0) = 0 is dropped), H elsewhere.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (r, row) in rows.iter().enumerate() {
        a[(r, r)] += 1.0;
        for &(c, w) in row {
            a[(r, c)] -= w;
        }
        a[(r, 0)] = 1.0;
    }
    let lu = a.lu();
    let diag = lu.u().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x.abs()), b.max(x.abs())));
    if !(lo > 1e-11 * hi) {
        return None;
    }
    let sol = lu.solve(&DVector::from_column_slice(rbar))?;
    let g = sol[0];
    let mut h: Vec<f64> = sol.iter().copied().collect();
    h[0] = 0.0;
    if !g.is_finite() || h.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((g, h))
}

/// Relative value iteration on the aperiodic transform `τP + (1 − τ)I`,
/// stopped on the span of successive differences.
fn relative_value_iteration(
    rbar: &[f64],
    rows: &[Vec<(usize, f64)>],
    options: &SolveOptions,
    warm: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), MdpError> {
    let n = rbar.len();
    let tau = options.rvi_tau;
    let mut v: Vec<f64> = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut d = vec![0.0; n];
    for _ in 0..options.rvi_max_iters {
        d.par_iter_mut().enumerate().for_each(|(s, ds)| {
            let pv: f64 = rows[s].iter().map(|&(c, w)| w * v[c]).sum();
            *ds = rbar[s] + pv - v[s];
        });
        let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if hi - lo < options.rvi_tol {
            let g = 0.5 * (lo + hi);
            let shift = v[0];
            v.iter_mut().for_each(|x| *x -= shift);
            return Ok((g, v));
        }
        for (x, dx) in v.iter_mut().zip(&d) {
            *x += tau * dx;
        }
        let shift = v[0];
        v.iter_mut().for_each(|x| *x -= shift);
    }
    Err(MdpError::Evaluation(format!(
        "relative value iteration did not reach span {} in {} iterations",
        options.rvi_tol, options.rvi_max_iters
    )))
}

/// Average-reward policy iteration over the grid.
pub fn policy_iteration(mdp: &DiscreteMdp, options: &SolveOptions) -> Result<PolicySolution, MdpError> {
    let na = mdp.actions;
    let ng = mdp.n_gamma();
    let nl = mdp.n_look();
    let mut policy = mdp.initial_policy();
    let mut history = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for iter in 1..=options.max_iters {
        let (g, h) = evaluate(mdp, &policy, options, warm.as_deref())?;
        history.push(g);
        let cont = mdp.continuation(&h);
        let tie = options.tie_tol;
        let improved: Vec<(u32, bool)> = (0..mdp.n_states())
            .into_par_iter()
            .map(|s| {
                let l = s % nl;
                let k = (s / nl) % ng;
                let i = s / (nl * ng);
                let q = |j: usize| mdp.reward(i, j, k) + cont[(i * na + j) * nl + l];
                let cur = policy[s] as usize;
                let q_cur = q(cur);
                let mut best = q_cur;
                for j in 0..na {
                    best = best.max(q(j));
                }
                let margin = tie * best.abs().max(1.0);
                if best - q_cur <= margin {
                    return (cur as u32, false);
                }
                let j = (0..na).find(|&j| best - q(j) <= margin).unwrap_or(cur);
                (j as u32, true)
            })
            .collect();
        let changed = improved.iter().any(|x| x.1);
        if !changed {
            return Ok(finish(mdp, policy, g, h, iter, history, options));
        }
        policy = improved.into_iter().map(|x| x.0).collect();
        warm = Some(h);
    }
    let (g, h) = evaluate(mdp, &policy, options, warm.as_deref())?;
    let last = finish(mdp, policy, g, h, options.max_iters, history, options);
    Err(MdpError::NoConvergence { iterations: options.max_iters, last: Box::new(last) })
}

fn finish(
    mdp: &DiscreteMdp,
    policy: Vec<u32>,
    g: f64,
    mut h: Vec<f64>,
    iterations: usize,
    gain_history: Vec<f64>,
    options: &SolveOptions,
) -> PolicySolution {
    let na = mdp.actions;
    let ng = mdp.n_gamma();
    let nl = mdp.n_look();
    let cont = mdp.continuation(&h);
    let mut bias: Vec<f64> = (0..mdp.n_states())
        .map(|s| {
            let l = s % nl;
            let k = (s / nl) % ng;
            let i = s / (nl * ng);
            let j = policy[s] as usize;
            mdp.reward(i, j, k) - g + cont[(i * na + j) * nl + l]
        })
        .collect();
    let shift = bias[0];
    bias.iter_mut().for_each(|x| *x -= shift);
    h.iter_mut().for_each(|x| *x -= shift);
    let actions = (0..mdp.n_states())
        .map(|s| mdp.action_value(s / (nl * ng), policy[s] as usize))
        .collect();
    PolicySolution {
        scenario: mdp.scenario,
        grid: mdp.grid,
        lookahead: mdp.lookahead,
        options: *options,
        gain: g,
        battery: mdp.battery.clone(),
        gamma: mdp.gamma.clone(),
        look: mdp.look.clone(),
        action_index: policy,
        actions,
        bias,
        expected_bias: h,
        iterations,
        gain_history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::finite::solve_finite;
    use crate::model::{rate, scenario_from, ChannelModel, Family};
    use crate::policies::h2;

    fn solve(sc: &ScenarioSpec, grid: GridSpec, la: Lookahead) -> (DiscreteMdp, PolicySolution) {
        let m = DiscreteMdp::build(sc, grid, la).unwrap();
        let s = policy_iteration(&m, &SolveOptions::default()).unwrap();
        (m, s)
    }

    /// `g + h(s) − [r(s, π(s)) + Σ P(s'|s) h(s')]` over the full state space.
    fn worst_residual(m: &DiscreteMdp, s: &PolicySolution) -> f64 {
        let mut worst: f64 = 0.0;
        let mut buf = Vec::new();
        for i in 0..m.n_battery() {
            for k in 0..m.n_gamma() {
                for l in 0..m.n_look() {
                    let idx = m.state_index(i, k, l);
                    let j = s.action_index[idx] as usize;
                    let mut rhs = m.reward(i, j, k);
                    m.successors(i, j, l, &mut buf);
                    for &(jn, w) in &buf {
                        for (kn, ln, rho) in m.contexts_of_class(m.next_class(l)) {
                            rhs += w * rho * s.bias[m.state_index(jn, kn, ln)];
                        }
                    }
                    worst = worst.max((s.gain + s.bias[idx] - rhs).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn evaluation_residual_vanishes() {
        for (fam, la) in [
            (Family::Exponential, Lookahead::None),
            (Family::Uniform, Lookahead::Energy),
            (Family::Bernoulli, Lookahead::Channel),
        ] {
            let sc = scenario_from(fam, 0.5, 10.0).unwrap();
            let (m, s) = solve(&sc, GridSpec::new(20, 6, 15, 6), la);
            assert!(worst_residual(&m, &s) < 1e-9, "{fam} {la:?}");
            assert_eq!(s.bias[0], 0.0);
        }
    }

    #[test]
    fn matches_generic_solver_on_small_grids() {
        for (fam, la) in [
            (Family::Exponential, Lookahead::None),
            (Family::Uniform, Lookahead::Energy),
            (Family::Bernoulli, Lookahead::Channel),
        ] {
            let sc = scenario_from(fam, 0.5, 5.0).unwrap();
            let (m, s) = solve(&sc, GridSpec::new(8, 4, 6, 4), la);
            let f = solve_finite(&m.to_finite(), 200, 1e-12).unwrap();
            assert!((f.gain - s.gain).abs() < 1e-10, "{fam} {la:?}: {} vs {}", f.gain, s.gain);
        }
    }

    #[test]
    fn rvi_agrees_with_direct_solve() {
        let sc = scenario_from(Family::Uniform, 0.5, 10.0).unwrap();
        let m = DiscreteMdp::build(&sc, GridSpec::new(15, 5, 10, 5), Lookahead::Channel).unwrap();
        let direct = policy_iteration(&m, &SolveOptions::default()).unwrap();
        let opts = SolveOptions { direct_limit: 0, ..SolveOptions::default() };
        let rvi = policy_iteration(&m, &opts).unwrap();
        assert!((direct.gain - rvi.gain).abs() < 1e-9);
        assert_eq!(direct.action_index, rvi.action_index);
    }

    #[test]
    fn gain_is_nondecreasing_and_policy_is_stable() {
        let sc = scenario_from(Family::Exponential, 0.9, 20.0).unwrap();
        let (m, s) = solve(&sc, GridSpec::new(30, 8, 30, 0), Lookahead::None);
        for w in s.gain_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        // One more improvement pass keeps every action.
        let cont = m.continuation(&s.expected_bias);
        for i in 0..m.n_battery() {
            for k in 0..m.n_gamma() {
                let cur = s.action_index[m.state_index(i, k, 0)] as usize;
                let q = |j: usize| m.reward(i, j, k) + cont[i * m.actions + j];
                let best = (0..m.actions).map(q).fold(f64::NEG_INFINITY, f64::max);
                assert!(best - q(cur) <= 1e-12 * best.abs().max(1.0));
            }
        }
        assert!(s.gain >= 0.0);
    }

    #[test]
    fn one_point_gain_is_rate_of_arrival() {
        let sc = scenario_from(Family::OnePoint, 0.5, 10.0)
            .unwrap()
            .with_channel(ChannelModel::Deterministic { gamma: 1.0 });
        let (_, s) = solve(&sc, GridSpec::desk(Lookahead::None), Lookahead::None);
        let e = sc.arrival.mean();
        let target = rate(e).unwrap();
        assert!((s.gain - target).abs() <= 0.005 * target, "{} vs {}", s.gain, target);
    }

    #[test]
    fn bernoulli_gain_is_p_h2_c() {
        let sc = scenario_from(Family::Bernoulli, 0.5, 10.0)
            .unwrap()
            .with_channel(ChannelModel::Deterministic { gamma: 1.0 });
        let (_, s) = solve(&sc, GridSpec::desk(Lookahead::None), Lookahead::None);
        let target = 0.5 * h2(sc.capacity, 0.5).unwrap();
        assert!((s.gain - target).abs() <= 0.005 * target, "{} vs {}", s.gain, target);
    }

    #[test]
    fn table_interpolation() {
        let sc = scenario_from(Family::Uniform, 0.5, 10.0).unwrap();
        let (_, s) = solve(&sc, GridSpec::new(12, 5, 12, 0), Lookahead::None);
        let st = |b, g| SystemState::new(b, g);
        assert_eq!(evaluate_policy_table(&s, &st(s.battery[4], s.gamma.nodes[2])).unwrap(), s.action_at(4, 2, 0));
        assert_eq!(evaluate_policy_table(&s, &st(0.0, 3.0)).unwrap(), 0.0);
        let mid = 0.5 * (s.battery[6] + s.battery[7]);
        let expect = 0.5 * (s.action_at(6, 3, 0) + s.action_at(7, 3, 0));
        let got = evaluate_policy_table(&s, &st(mid, s.gamma.nodes[3])).unwrap();
        assert!((got - expect.min(mid)).abs() < 1e-12);
        // Above the truncation the last γ node is used.
        assert_eq!(
            evaluate_policy_table(&s, &st(s.battery[5], 50.0)).unwrap(),
            s.action_at(5, 4, 0)
        );
        let (_, e) = solve(&sc, GridSpec::new(12, 5, 12, 4), Lookahead::Energy);
        assert!(matches!(evaluate_policy_table(&e, &st(1.0, 1.0)), Err(MdpError::MissingLookahead(_))));
    }
}
