use serde::{Deserialize, Serialize};

use crate::model::{ChannelModel, EnergyArrivalModel};

/// A discretized random variable: sorted nodes with probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis {
    pub fn point(x: f64) -> Self {
        Self { nodes: vec![x], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quantile-spaced nodes `F⁻¹(q·k/(n−1))`. Each node carries the mass
    /// between the quantile midpoints around it; the last one also takes the
    /// truncated tail.
    pub fn channel(model: &ChannelModel, levels: usize, truncation: f64) -> Self {
        if let ChannelModel::Deterministic { gamma } = *model {
            return Self::point(gamma);
        }
        let n = levels;
        let u: Vec<f64> = (0..n).map(|k| truncation * k as f64 / (n - 1) as f64).collect();
        let nodes = u.iter().map(|&x| model.quantile(x)).collect();
        let mut bounds = Vec::with_capacity(n + 1);
        bounds.push(0.0);
        bounds.extend(u.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        bounds.push(1.0);
        let weights = bounds.windows(2).map(|w| w[1] - w[0]).collect();
        Self { nodes, weights }
    }

    /// Nodes for the known next arrival `min(E, c)`. Discrete laws keep their
    /// (clipped) atoms. Continuous laws get a node at `c` for the saturating
    /// mass and equal-probability bins on `[0, c)`, each represented by its
    /// conditional mean.
    pub fn energy(model: &EnergyArrivalModel, capacity: f64, levels: usize) -> Self {
        if let Some(atoms) = model.atoms() {
            let mut merged: Vec<(f64, f64)> = Vec::new();
            let mut atoms: Vec<(f64, f64)> =
                atoms.into_iter().map(|(v, w)| (v.min(capacity), w)).filter(|a| a.1 > 0.0).collect();
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (v, w) in atoms {
                match merged.last_mut() {
                    Some(last) if last.0 == v => last.1 += w,
                    _ => merged.push((v, w)),
                }
            }
            return Self {
                nodes: merged.iter().map(|a| a.0).collect(),
                weights: merged.iter().map(|a| a.1).collect(),
            };
        }
        let saturated = model.mass_between(capacity, f64::INFINITY);
        let has_atom = saturated > 1e-12;
        let bins = if has_atom { levels.saturating_sub(1).max(1) } else { levels.max(1) };
        let below = model.cdf(capacity);
        let mut nodes = Vec::with_capacity(levels);
        let mut weights = Vec::with_capacity(levels);
        let mut lo = 0.0;
        for m in 1..=bins {
            let hi = if m == bins { capacity } else { model.quantile(below * m as f64 / bins as f64) };
            let mass = model.mass_between(lo, hi);
            if mass > 0.0 {
                nodes.push((model.moment_between(lo, hi) / mass).clamp(lo, hi));
                weights.push(mass);
            }
            lo = hi;
        }
        if has_atom {
            nodes.push(capacity);
            weights.push(saturated);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { nodes, weights }
    }
}

/// Linear-interpolation bracket of `x` in sorted `nodes`: `(lo, hi, t)` with
/// `x ≈ (1 − t)·nodes[lo] + t·nodes[hi]`. Values outside the hull clamp to
/// the end nodes.
pub fn bracket(nodes: &[f64], x: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || x <= nodes[0] {
        return (0, 0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = nodes.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let t = (x - nodes[lo]) / (nodes[hi] - nodes[lo]);
    (lo, hi, t)
}

/// Bracket on the uniform grid `{c·i/(n−1)}`.
#[inline]
pub(crate) fn uniform_bracket(n: usize, step: f64, x: f64) -> (usize, f64) {
    let pos = (x / step).max(0.0);
    let lo = (pos.floor() as usize).min(n - 2);
    let t = (pos - lo as f64).clamp(0.0, 1.0);
    (lo, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_axis_is_a_distribution() {
        let ax = Axis::channel(&ChannelModel::Rayleigh, 20, 0.999);
        assert_eq!(ax.len(), 20);
        assert_eq!(ax.nodes[0], 0.0);
        assert!((ax.nodes[19] - 1000f64.ln()).abs() < 1e-12);
        assert!((ax.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(ax.nodes.windows(2).all(|w| w[0] < w[1]));
        let det = Axis::channel(&ChannelModel::Deterministic { gamma: 2.0 }, 20, 0.999);
        assert_eq!(det, Axis::point(2.0));
    }

    #[test]
    fn energy_axis_preserves_clipped_mean() {
        let c = 10.0;
        for m in [
            EnergyArrivalModel::Exponential { rate: 0.2 },
            EnergyArrivalModel::Uniform { upper: 18.0 },
            EnergyArrivalModel::Uniform { upper: 4.0 },
            EnergyArrivalModel::Bernoulli { prob: 0.3, magnitude: 12.0 },
            EnergyArrivalModel::OnePoint { energy: 3.0 },
        ] {
            let ax = Axis::energy(&m, c, 12);
            assert!(ax.len() <= 12);
            assert!((ax.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mean: f64 = ax.nodes.iter().zip(&ax.weights).map(|(x, w)| x * w).sum();
            assert!((mean - m.clipped_mean(c)).abs() < 1e-10, "{m:?}");
            assert!(ax.nodes.iter().all(|&x| (0.0..=c).contains(&x)));
            assert!(ax.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        let b = Axis::energy(&EnergyArrivalModel::Bernoulli { prob: 0.3, magnitude: 12.0 }, c, 12);
        assert_eq!(b.nodes, vec![0.0, 10.0]);
    }

    #[test]
    fn bracket_interpolates_and_clamps() {
        let nodes = [0.0, 1.0, 3.0];
        assert_eq!(bracket(&nodes, -1.0), (0, 0, 0.0));
        assert_eq!(bracket(&nodes, 5.0), (2, 2, 0.0));
        assert_eq!(bracket(&nodes, 1.0), (1, 2, 0.0));
        assert_eq!(bracket(&nodes, 2.0), (1, 2, 0.5));
        assert_eq!(bracket(&[4.0], 9.0), (0, 0, 0.0));
        assert_eq!(uniform_bracket(5, 0.25, 1.0), (3, 1.0));
        let (lo, t) = uniform_bracket(5, 0.25, 0.3);
        assert_eq!(lo, 1);
        assert!((t - 0.2).abs() < 1e-12);
    }
}
