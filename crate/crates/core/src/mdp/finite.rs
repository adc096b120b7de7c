//! Plain finite average-reward MDPs with explicit transition lists. Used as
//! an independent reference for the structured grid solver.

use nalgebra::{DMatrix, DVector};

use super::build::DiscreteMdp;
use super::MdpError;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteAction {
    pub reward: f64,
    pub next: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    /// Admissible actions per state.
    pub actions: Vec<Vec<FiniteAction>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSolution {
    pub gain: f64,
    /// Bias with `h(0) = 0`.
    pub bias: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
}

fn evaluate(mdp: &FiniteMdp, policy: &[usize]) -> Result<(f64, Vec<f64>), MdpError> {
    let n = mdp.actions.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for (s, acts) in mdp.actions.iter().enumerate() {
        let act = &acts[policy[s]];
        r[s] = act.reward;
        a[(s, s)] += 1.0;
        for &(t, p) in &act.next {
            a[(s, t)] -= p;
        }
        a[(s, 0)] = 1.0;
    }
    let x = a.lu().solve(&r).ok_or_else(|| MdpError::Evaluation("singular system".into()))?;
    let g = x[0];
    let mut h: Vec<f64> = x.iter().copied().collect();
    h[0] = 0.0;
    Ok((g, h))
}

/// Policy iteration with dense evaluation; ties keep the current action,
/// otherwise the lowest-indexed best action is taken.
pub fn solve_finite(mdp: &FiniteMdp, max_iters: usize, tie_tol: f64) -> Result<FiniteSolution, MdpError> {
    if mdp.actions.is_empty() || mdp.actions.iter().any(|a| a.is_empty()) {
        return Err(MdpError::Grid("every state needs at least one action".into()));
    }
    let mut policy = vec![0usize; mdp.actions.len()];
    for iter in 1..=max_iters {
        let (g, h) = evaluate(mdp, &policy)?;
        let mut changed = false;
        for (s, acts) in mdp.actions.iter().enumerate() {
            let q: Vec<f64> =
                acts.iter().map(|a| a.reward + a.next.iter().map(|&(t, p)| p * h[t]).sum::<f64>()).collect();
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let margin = tie_tol * best.abs().max(1.0);
            if best - q[policy[s]] > margin {
                policy[s] = q.iter().position(|&v| best - v <= margin).unwrap();
                changed = true;
            }
        }
        if !changed {
            return Ok(FiniteSolution { gain: g, bias: h, policy, iterations: iter });
        }
    }
    Err(MdpError::Evaluation(format!("no convergence in {max_iters} iterations")))
}

impl DiscreteMdp {
    /// Expands the grid instance into an explicit finite MDP over all
    /// `(battery, γ, lookahead)` states. Intended for small grids.
    pub fn to_finite(&self) -> FiniteMdp {
        let mut buf = Vec::new();
        let mut actions = vec![Vec::new(); self.n_states()];
        for i in 0..self.n_battery() {
            for k in 0..self.n_gamma() {
                for l in 0..self.n_look() {
                    let ctx = self.contexts_of_class(self.next_class(l));
                    let acts = (0..self.actions)
                        .map(|j| {
                            self.successors(i, j, l, &mut buf);
                            let mut next = Vec::new();
                            for &(jn, w) in &buf {
                                for &(kn, ln, rho) in &ctx {
                                    next.push((self.state_index(jn, kn, ln), w * rho));
                                }
                            }
                            FiniteAction { reward: self.reward(i, j, k), next }
                        })
                        .collect();
                    actions[self.state_index(i, k, l)] = acts;
                }
            }
        }
        FiniteMdp { actions }
    }
}
