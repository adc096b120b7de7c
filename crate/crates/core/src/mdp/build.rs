use rayon::prelude::*;

use super::grid::{uniform_bracket, Axis};
use super::{GridSpec, Lookahead, MdpError};
use crate::model::{rate_unchecked, EnergyArrivalModel, ScenarioSpec};

/// Sparse rows over the battery grid.
#[derive(Debug, Clone, Default)]
pub(crate) struct Rows {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Rows {
    #[inline]
    pub(crate) fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }
}

/// A discretized instance. Actions at battery node `b_i` are the fractions
/// `u_ij = b_i·j/(A−1)`.
#[derive(Debug, Clone)]
pub struct DiscreteMdp {
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    pub lookahead: Lookahead,
    pub battery: Vec<f64>,
    pub gamma: Axis,
    /// Lookahead axis: energy nodes, the γ grid, or a single dummy node.
    pub look: Axis,
    pub actions: usize,
    step: f64,
    /// `r(γ_k u_ij)` at `[(i·A + j)·G + k]`.
    rewards: Vec<f64>,
    /// Next-battery rows after spending `u_ij` (no energy lookahead).
    rows: Rows,
}

impl DiscreteMdp {
    pub fn build(
        scenario: &ScenarioSpec,
        grid: GridSpec,
        lookahead: Lookahead,
    ) -> Result<Self, MdpError> {
        grid.validate(lookahead)?;
        scenario.arrival.validate()?;
        let c = scenario.capacity;
        if !(c > 0.0 && c.is_finite()) {
            return Err(MdpError::Grid(format!("capacity must be positive, got {c}")));
        }
        let nb = grid.battery_levels;
        let na = grid.action_levels;
        let step = c / (nb - 1) as f64;
        let battery: Vec<f64> = (0..nb).map(|i| if i == nb - 1 { c } else { step * i as f64 }).collect();
        let gamma = Axis::channel(&scenario.channel, grid.gamma_levels, grid.gamma_truncation_quantile);
        let look = match lookahead {
            Lookahead::None => Axis::point(0.0),
            Lookahead::Energy => Axis::energy(&scenario.arrival, c, grid.lookahead_levels),
            Lookahead::Channel => gamma.clone(),
        };
        let ng = gamma.len();
        let mut rewards = vec![0.0; nb * na * ng];
        rewards.par_chunks_mut(na * ng).enumerate().for_each(|(i, chunk)| {
            for j in 0..na {
                let u = battery[i] * j as f64 / (na - 1) as f64;
                for (k, &g) in gamma.nodes.iter().enumerate() {
                    chunk[j * ng + k] = rate_unchecked(g * u);
                }
            }
        });
        let rows = if lookahead == Lookahead::Energy {
            Rows::default()
        } else {
            build_rows(&scenario.arrival, &battery, na, step)
        };
        Ok(Self {
            scenario: *scenario,
            grid,
            lookahead,
            battery,
            gamma,
            look,
            actions: na,
            step,
            rewards,
            rows,
        })
    }

    pub fn capacity(&self) -> f64 {
        self.scenario.capacity
    }

    pub fn n_battery(&self) -> usize {
        self.battery.len()
    }

    pub fn n_gamma(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_look(&self) -> usize {
        self.look.len()
    }

    /// Number of grid states `(i, k, l)`.
    pub fn n_states(&self) -> usize {
        self.n_battery() * self.n_gamma() * self.n_look()
    }

    #[inline]
    pub fn state_index(&self, i: usize, k: usize, l: usize) -> usize {
        (i * self.n_gamma() + k) * self.n_look() + l
    }

    /// Continuation classes: the next-slot channel with channel lookahead,
    /// otherwise a single class.
    pub fn n_classes(&self) -> usize {
        match self.lookahead {
            Lookahead::Channel => self.n_look(),
            _ => 1,
        }
    }

    /// Class of the continuation after a decision in a state with lookahead
    /// index `l`.
    #[inline]
    pub fn next_class(&self, l: usize) -> usize {
        match self.lookahead {
            Lookahead::Channel => l,
            _ => 0,
        }
    }

    /// `(k, l, weight)` of the contexts a state of class `κ` averages over.
    pub fn contexts_of_class(&self, class: usize) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match self.lookahead {
            Lookahead::Channel => {
                for (l, &w) in self.look.weights.iter().enumerate() {
                    out.push((class, l, w));
                }
            }
            _ => {
                for (k, &wk) in self.gamma.weights.iter().enumerate() {
                    for (l, &wl) in self.look.weights.iter().enumerate() {
                        out.push((k, l, wk * wl));
                    }
                }
            }
        }
        out
    }

    #[inline]
    pub fn action_value(&self, i: usize, j: usize) -> f64 {
        self.battery[i] * j as f64 / (self.actions - 1) as f64
    }

    #[inline]
    pub fn reward(&self, i: usize, j: usize, k: usize) -> f64 {
        self.rewards[(i * self.actions + j) * self.n_gamma() + k]
    }

    /// Appends `(next battery node, probability)` after spending `u_ij` in a
    /// state with lookahead index `l`.
    pub fn successors(&self, i: usize, j: usize, l: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if self.lookahead == Lookahead::Energy {
            let y = self.energy_next(i, j, l);
            let (lo, t) = uniform_bracket(self.n_battery(), self.step, y);
            out.push((lo, 1.0 - t));
            if t > 0.0 {
                out.push((lo + 1, t));
            }
        } else {
            let (cols, vals) = self.rows.row(i * self.actions + j);
            out.extend(cols.iter().map(|&c| c as usize).zip(vals.iter().copied()));
        }
    }

    #[inline]
    fn energy_next(&self, i: usize, j: usize, l: usize) -> f64 {
        (self.battery[i] - self.action_value(i, j) + self.look.nodes[l]).min(self.capacity())
    }

    /// Expected continuation `Σ P(j'|i,j,l)·H(j', κ(l))` for every
    /// `(i, j, l)`, stored at `[(i·A + j)·L + l]`. `h` is indexed
    /// `[j'·classes + κ]`.
    pub(crate) fn continuation(&self, h: &[f64]) -> Vec<f64> {
        let na = self.actions;
        let nl = self.n_look();
        let ncls = self.n_classes();
        let mut out = vec![0.0; self.n_battery() * na * nl];
        out.par_chunks_mut(na * nl).enumerate().for_each(|(i, chunk)| {
            for j in 0..na {
                match self.lookahead {
                    Lookahead::Energy => {
                        for l in 0..nl {
                            let y = self.energy_next(i, j, l);
                            let (lo, t) = uniform_bracket(self.n_battery(), self.step, y);
                            let v = if t > 0.0 { (1.0 - t) * h[lo] + t * h[lo + 1] } else { h[lo] };
                            chunk[j * nl + l] = v;
                        }
                    }
                    _ => {
                        let (cols, vals) = self.rows.row(i * na + j);
                        for l in 0..nl {
                            let kappa = self.next_class(l);
                            chunk[j * nl + l] = cols
                                .iter()
                                .zip(vals)
                                .map(|(&c, &w)| w * h[c as usize * ncls + kappa])
                                .sum();
                        }
                    }
                }
            }
        });
        out
    }

    /// Clipped-greedy starting policy: spend `min(b, E[min(E, c)])`.
    pub(crate) fn initial_policy(&self) -> Vec<u32> {
        let target = self.scenario.clipped_mean();
        let na = self.actions;
        let mut pol = vec![0u32; self.n_states()];
        for i in 0..self.n_battery() {
            let b = self.battery[i];
            let j = if b > 0.0 { ((na - 1) as f64 * (target / b).min(1.0)).round() as u32 } else { 0 };
            for k in 0..self.n_gamma() {
                for l in 0..self.n_look() {
                    pol[self.state_index(i, k, l)] = j;
                }
            }
        }
        pol
    }
}

/// Rows of `y = min(x + E, c)` mapped onto the battery grid by linear
/// interpolation, for every post-decision level `x = b_i − u_ij`. Continuous
/// laws are integrated exactly cell by cell; the mass beyond `c − x` goes to
/// the top node.
fn build_rows(arrival: &EnergyArrivalModel, battery: &[f64], na: usize, step: f64) -> Rows {
    let nb = battery.len();
    let c = battery[nb - 1];
    let per_i: Vec<Vec<(Vec<u32>, Vec<f64>)>> = (0..nb)
        .into_par_iter()
        .map(|i| {
            (0..na)
                .map(|j| {
                    let x = battery[i] - battery[i] * j as f64 / (na - 1) as f64;
                    let mut dense = vec![0.0; nb];
                    fill_row(arrival, x.max(0.0), c, step, &mut dense);
                    let total: f64 = dense.iter().sum();
                    let mut cols = Vec::new();
                    let mut vals = Vec::new();
                    for (col, &w) in dense.iter().enumerate() {
                        if w > 0.0 {
                            cols.push(col as u32);
                            vals.push(w / total);
                        }
                    }
                    (cols, vals)
                })
                .collect()
        })
        .collect();
    let mut rows = Rows { offsets: vec![0], cols: Vec::new(), vals: Vec::new() };
    for (cols, vals) in per_i.into_iter().flatten() {
        rows.cols.extend(cols);
        rows.vals.extend(vals);
        rows.offsets.push(rows.cols.len());
    }
    rows
}

fn fill_row(arrival: &EnergyArrivalModel, x: f64, c: f64, step: f64, dense: &mut [f64]) {
    let nb = dense.len();
    let spread = |y: f64, w: f64, dense: &mut [f64]| {
        let (lo, t) = uniform_bracket(nb, step, y.min(c));
        dense[lo] += w * (1.0 - t);
        dense[lo + 1] += w * t;
    };
    if let Some(atoms) = arrival.atoms() {
        for (v, w) in atoms {
            spread(x + v, w, dense);
        }
        return;
    }
    let first = ((x / step).floor() as usize).min(nb - 2);
    for cell in first..nb - 1 {
        let node = step * cell as f64;
        let lo = node.max(x);
        let hi = if cell == nb - 2 { c } else { step * (cell + 1) as f64 };
        if hi <= lo {
            continue;
        }
        let mass = arrival.mass_between(lo - x, hi - x);
        if mass <= 0.0 {
            continue;
        }
        // E[y·1{cell}] with y = x + E.
        let first_moment = arrival.moment_between(lo - x, hi - x) + x * mass;
        let up = ((first_moment - node * mass) / step).clamp(0.0, mass);
        dense[cell] += mass - up;
        dense[cell + 1] += up;
    }
    dense[nb - 1] += arrival.mass_between(c - x, f64::INFINITY);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{scenario_from, ChannelModel, Family};
    use crate::quadrature::GaussLegendre;

    fn row_sums(m: &DiscreteMdp) -> f64 {
        let mut worst: f64 = 0.0;
        let mut buf = Vec::new();
        for i in 0..m.n_battery() {
            for j in 0..m.actions {
                for l in 0..m.n_look() {
                    m.successors(i, j, l, &mut buf);
                    let s: f64 = buf.iter().map(|x| x.1).sum();
                    worst = worst.max((s - 1.0).abs());
                    assert!(buf.iter().all(|x| x.1 >= 0.0));
                }
            }
        }
        worst
    }

    #[test]
    fn rows_are_stochastic() {
        for fam in [Family::Bernoulli, Family::Exponential, Family::Uniform, Family::OnePoint] {
            for nmcr in [0.1, 0.5, 0.9] {
                let sc = scenario_from(fam, nmcr, 10.0).unwrap();
                for la in [Lookahead::None, Lookahead::Energy, Lookahead::Channel] {
                    let m = DiscreteMdp::build(&sc, GridSpec::new(15, 5, 9, 5), la).unwrap();
                    assert!(row_sums(&m) < 1e-12, "{fam} {nmcr} {la:?}");
                }
            }
        }
    }

    #[test]
    fn point_mass_rows_have_two_successors() {
        let sc = scenario_from(Family::OnePoint, 0.37, 3.0)
            .unwrap()
            .with_channel(ChannelModel::Deterministic { gamma: 1.0 });
        let m = DiscreteMdp::build(&sc, GridSpec::new(33, 2, 17, 0), Lookahead::None).unwrap();
        assert_eq!(m.n_gamma(), 1);
        let mut buf = Vec::new();
        for i in 0..m.n_battery() {
            for j in 0..m.actions {
                m.successors(i, j, 0, &mut buf);
                assert!(buf.len() <= 2);
            }
        }
        let b = scenario_from(Family::Bernoulli, 0.4, 3.0).unwrap();
        let m = DiscreteMdp::build(&b, GridSpec::new(9, 2, 5, 2), Lookahead::Energy).unwrap();
        assert_eq!(m.look.weights, vec![0.6, 0.4]);
    }

    /// Gauss–Legendre integration of the interpolation hat functions.
    fn quadrature_row(arrival: &EnergyArrivalModel, x: f64, c: f64, nb: usize) -> Vec<f64> {
        let gl = GaussLegendre::new(64);
        let step = c / (nb - 1) as f64;
        let density = |e: f64| match *arrival {
            EnergyArrivalModel::Exponential { rate } => rate * (-rate * e).exp(),
            EnergyArrivalModel::Uniform { upper } => {
                if e < upper {
                    1.0 / upper
                } else {
                    0.0
                }
            }
            _ => unreachable!(),
        };
        let mut row = vec![0.0; nb];
        for (j, slot) in row.iter_mut().enumerate() {
            let node = step * j as f64;
            let hat = |y: f64| (1.0 - ((y - node) / step).abs()).max(0.0);
            let a = (node - step).max(x);
            let b = (node + step).min(c);
            if b > a {
                // Split at the node and the uniform cutoff so each panel is smooth.
                let mut cuts = vec![a, b];
                if node > a && node < b {
                    cuts.push(node);
                }
                if let EnergyArrivalModel::Uniform { upper } = *arrival {
                    if x + upper > a && x + upper < b {
                        cuts.push(x + upper);
                    }
                }
                cuts.sort_by(f64::total_cmp);
                for w in cuts.windows(2) {
                    *slot += gl.integrate(w[0], w[1], |y| hat(y) * density(y - x));
                }
            }
        }
        row[nb - 1] += 1.0 - arrival.cdf(c - x);
        row
    }

    #[test]
    fn exact_rows_match_quadrature_oracle() {
        let c = 10.0;
        let nb = 11;
        for arrival in [
            EnergyArrivalModel::Exponential { rate: 0.3 },
            EnergyArrivalModel::Uniform { upper: 7.3 },
            EnergyArrivalModel::Uniform { upper: 16.0 },
        ] {
            for x in [0.0, 0.35, 4.0, 9.99, 10.0] {
                let mut dense = vec![0.0; nb];
                fill_row(&arrival, x, c, c / (nb - 1) as f64, &mut dense);
                let oracle = quadrature_row(&arrival, x, c, nb);
                for (a, b) in dense.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12, "{arrival:?} x={x}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let sc = scenario_from(Family::Uniform, 0.5, 0.0).unwrap();
        assert!(DiscreteMdp::build(&sc, GridSpec::new(1, 5, 5, 0), Lookahead::None).is_err());
        assert!(DiscreteMdp::build(&sc, GridSpec::new(5, 5, 5, 4), Lookahead::Channel).is_err());
        assert!(DiscreteMdp::build(&sc, GridSpec::new(5, 5, 5, 1), Lookahead::Energy).is_err());
    }
}
