//! Scalar helpers, arrival and channel models, battery dynamics and scenario
//! derivation.
//!
//! All energies are dimensionless: the receiver noise variance is normalized
//! to one, so an energy `u` spent on a channel with SNR coefficient `γ`
//! yields `log(1 + γu)` nats.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid clip bounds: lo={lo} > hi={hi}")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("rate argument must be nonnegative, got {0}")]
    NegativeRate(f64),
    #[error("energy causality violated: consumed {consumed} > battery {battery}")]
    Causality { consumed: f64, battery: f64 },
    #[error("battery level {battery} outside [0, {capacity}]")]
    InvalidBattery { battery: f64, capacity: f64 },
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("unknown distribution family `{0}`")]
    UnknownFamily(String),
}

pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64, ModelError> {
    if lo > hi {
        return Err(ModelError::InvalidBounds { lo, hi });
    }
    Ok(x.max(lo).min(hi))
}

#[inline]
pub fn upper_clip(x: f64, hi: f64) -> f64 {
    x.min(hi)
}

#[inline]
pub fn lower_clip(x: f64, lo: f64) -> f64 {
    x.max(lo)
}

/// `log(1 + x)` nats per channel use.
pub fn rate(x: f64) -> Result<f64, ModelError> {
    if x < 0.0 || x.is_nan() {
        return Err(ModelError::NegativeRate(x));
    }
    Ok(x.ln_1p())
}

/// Unchecked `log(1 + x)` for hot loops where `x ≥ 0` is already known.
#[inline]
pub(crate) fn rate_unchecked(x: f64) -> f64 {
    x.ln_1p()
}

#[inline]
pub fn rate_derivative(x: f64) -> f64 {
    1.0 / (1.0 + x)
}

/// Battery level after consuming `consumed` and harvesting `arrival`.
pub fn battery_step(
    battery: f64,
    consumed: f64,
    arrival: f64,
    capacity: f64,
) -> Result<f64, ModelError> {
    if battery > capacity || battery < 0.0 {
        return Err(ModelError::InvalidBattery { battery, capacity });
    }
    if consumed > battery {
        return Err(ModelError::Causality { consumed, battery });
    }
    if consumed < 0.0 {
        return Err(ModelError::Domain { what: "consumed energy", value: consumed });
    }
    if arrival < 0.0 {
        return Err(ModelError::Domain { what: "energy arrival", value: arrival });
    }
    Ok(upper_clip(battery - consumed + arrival, capacity).max(0.0))
}

/// Distribution family tag used to derive scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    OnePoint,
    Bernoulli,
    Exponential,
    Uniform,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::OnePoint => "onepoint",
            Family::Bernoulli => "bernoulli",
            Family::Exponential => "exponential",
            Family::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "onepoint" | "one-point" | "deterministic" => Ok(Family::OnePoint),
            "bernoulli" => Ok(Family::Bernoulli),
            "exponential" | "exp" => Ok(Family::Exponential),
            "uniform" => Ok(Family::Uniform),
            _ => Err(ModelError::UnknownFamily(s.to_string())),
        }
    }
}

/// Per-slot harvested energy distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnergyArrivalModel {
    OnePoint { energy: f64 },
    /// `prob·δ_magnitude + (1 − prob)·δ_0`.
    Bernoulli { prob: f64, magnitude: f64 },
    Exponential { rate: f64 },
    /// Uniform on `[0, upper]`.
    Uniform { upper: f64 },
}

impl EnergyArrivalModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Self::OnePoint { energy } if !(energy >= 0.0 && energy.is_finite()) => {
                Err(ModelError::Domain { what: "one-point energy", value: energy })
            }
            Self::Bernoulli { prob, .. } if !(0.0..=1.0).contains(&prob) => {
                Err(ModelError::Domain { what: "Bernoulli probability", value: prob })
            }
            Self::Bernoulli { magnitude, .. } if !(magnitude > 0.0 && magnitude.is_finite()) => {
                Err(ModelError::Domain { what: "Bernoulli magnitude", value: magnitude })
            }
            Self::Exponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(ModelError::Domain { what: "exponential rate", value: rate })
            }
            Self::Uniform { upper } if !(upper > 0.0 && upper.is_finite()) => {
                Err(ModelError::Domain { what: "uniform upper bound", value: upper })
            }
            _ => Ok(()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Self::OnePoint { .. } => Family::OnePoint,
            Self::Bernoulli { .. } => Family::Bernoulli,
            Self::Exponential { .. } => Family::Exponential,
            Self::Uniform { .. } => Family::Uniform,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::OnePoint { energy } => energy,
            Self::Bernoulli { prob, magnitude } => prob * magnitude,
            Self::Exponential { rate } => 1.0 / rate,
            Self::Uniform { upper } => 0.5 * upper,
        }
    }

    /// `E[min(E, x)]`.
    pub fn clipped_mean(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match *self {
            Self::OnePoint { energy } => energy.min(x),
            Self::Bernoulli { prob, magnitude } => prob * magnitude.min(x),
            Self::Exponential { rate } => -(-rate * x).exp_m1() / rate,
            Self::Uniform { upper } => {
                if x <= upper {
                    x - x * x / (2.0 * upper)
                } else {
                    0.5 * upper
                }
            }
        }
    }

    /// Dynamic mean-to-capacity ratio `E[min(E, x)] / x`, with the `x → 0`
    /// limit `P{E > 0}` at zero.
    pub fn dmcr(&self, x: f64) -> f64 {
        if x > 0.0 {
            return self.clipped_mean(x) / x;
        }
        match *self {
            Self::OnePoint { energy } => {
                if energy > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Bernoulli { prob, .. } => prob,
            Self::Exponential { .. } | Self::Uniform { .. } => 1.0,
        }
    }

    /// Point masses `(value, probability)` for discrete variants.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Self::OnePoint { energy } => Some(vec![(energy, 1.0)]),
            Self::Bernoulli { prob, magnitude } => {
                let mut v = Vec::with_capacity(2);
                if prob < 1.0 {
                    v.push((0.0, 1.0 - prob));
                }
                if prob > 0.0 {
                    v.push((magnitude, prob));
                }
                Some(v)
            }
            _ => None,
        }
    }

    /// `P{E ≤ x}`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::OnePoint { energy } => {
                if x >= energy {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Bernoulli { prob, magnitude } => {
                if x < 0.0 {
                    0.0
                } else if x < magnitude {
                    1.0 - prob
                } else {
                    1.0
                }
            }
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Self::Uniform { upper } => (x / upper).clamp(0.0, 1.0),
        }
    }

    /// `P{lo ≤ E < hi}` for the continuous variants; atoms follow the same
    /// half-open convention.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match *self {
            Self::Exponential { rate } => {
                let lo = lo.max(0.0);
                if hi <= lo {
                    return 0.0;
                }
                // e^{-λ lo} − e^{-λ hi}, written to keep relative accuracy.
                (-rate * lo).exp() * -(-rate * (hi - lo)).exp_m1()
            }
            Self::Uniform { upper } => {
                let a = lo.clamp(0.0, upper);
                let b = hi.clamp(0.0, upper);
                (b - a) / upper
            }
            _ => self
                .atoms()
                .unwrap_or_default()
                .into_iter()
                .filter(|&(v, _)| v >= lo && v < hi)
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// `E[E · 1{lo ≤ E < hi}]`.
    pub fn moment_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match *self {
            Self::Exponential { rate } => {
                let lo = lo.max(0.0);
                if hi <= lo {
                    return 0.0;
                }
                // ∫ t λ e^{-λt} dt = [-(t + 1/λ) e^{-λt}]
                let f = |t: f64| (t + 1.0 / rate) * (-rate * t).exp();
                if hi.is_infinite() {
                    f(lo)
                } else {
                    f(lo) - f(hi)
                }
            }
            Self::Uniform { upper } => {
                let a = lo.clamp(0.0, upper);
                let b = hi.clamp(0.0, upper);
                (b * b - a * a) / (2.0 * upper)
            }
            _ => self
                .atoms()
                .unwrap_or_default()
                .into_iter()
                .filter(|&(v, _)| v >= lo && v < hi)
                .map(|(v, w)| v * w)
                .sum(),
        }
    }

    /// Quantile function for the continuous variants.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::Uniform { upper } => u * upper,
            Self::OnePoint { energy } => energy,
            Self::Bernoulli { prob, magnitude } => {
                if u <= 1.0 - prob {
                    0.0
                } else {
                    magnitude
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::OnePoint { energy } => energy,
            Self::Bernoulli { prob, magnitude } => {
                if rng.random::<f64>() < prob {
                    magnitude
                } else {
                    0.0
                }
            }
            Self::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            Self::Uniform { upper } => upper * rng.random::<f64>(),
        }
    }
}

/// Per-slot channel SNR coefficient distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelModel {
    Deterministic { gamma: f64 },
    /// `Γ = |H|²` with `H` circularly-symmetric Gaussian, i.e. `Γ ~ Exp(1)`.
    Rayleigh,
}

impl ChannelModel {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Deterministic { gamma } => gamma,
            Self::Rayleigh => 1.0,
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Self::Deterministic { gamma } => gamma,
            Self::Rayleigh => -(-u.clamp(0.0, 1.0)).ln_1p(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Deterministic { gamma } => {
                if x >= gamma {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Rayleigh => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x).exp_m1()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Deterministic { gamma } => gamma,
            Self::Rayleigh => Exp1.sample(rng),
        }
    }
}

pub fn sample_arrival<R: Rng + ?Sized>(model: &EnergyArrivalModel, rng: &mut R) -> f64 {
    model.sample(rng)
}

pub fn sample_gamma<R: Rng + ?Sized>(model: &ChannelModel, rng: &mut R) -> f64 {
    model.sample(rng)
}

/// Mean-to-capacity ratio `μ̄(P_E, c)/c` of a family parameterized by its
/// nominal ratio `E[E]/c`.
pub fn mcr(family: Family, nmcr: f64) -> Result<f64, ModelError> {
    let domain = ModelError::Domain { what: "NMCR", value: nmcr };
    if !nmcr.is_finite() || nmcr <= 0.0 {
        return Err(domain);
    }
    match family {
        Family::OnePoint | Family::Bernoulli => {
            if nmcr > 1.0 {
                return Err(domain);
            }
            Ok(nmcr)
        }
        Family::Exponential => Ok(-nmcr * (-1.0 / nmcr).exp_m1()),
        Family::Uniform => {
            if nmcr > 1.0 {
                return Err(domain);
            }
            if nmcr <= 0.5 {
                Ok(nmcr)
            } else {
                Ok(1.0 - 1.0 / (4.0 * nmcr))
            }
        }
    }
}

/// A fully specified operating point: battery, arrivals and channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub capacity: f64,
    pub arrival: EnergyArrivalModel,
    pub channel: ChannelModel,
    pub family: Family,
    pub nmcr: f64,
    pub nsnr_db: f64,
}

impl ScenarioSpec {
    pub fn with_channel(mut self, channel: ChannelModel) -> Self {
        self.channel = channel;
        self
    }

    /// Clipped mean of one slot's arrivals at full capacity.
    pub fn clipped_mean(&self) -> f64 {
        self.arrival.clipped_mean(self.capacity)
    }

    /// Stable textual identity, used for seeding and cache keys.
    pub fn key(&self) -> String {
        format!(
            "{}:nmcr={:?}:nsnr={:?}:c={:?}:arrival={:?}:channel={:?}",
            self.family, self.nmcr, self.nsnr_db, self.capacity, self.arrival, self.channel
        )
    }

    pub fn label(&self) -> String {
        format!("{} NMCR {} NSNR {} dB", self.family, self.nmcr, self.nsnr_db)
    }
}

/// Derives the battery capacity and arrival parameters for a family at a
/// nominal mean-to-capacity ratio and nominal SNR. The channel defaults to
/// Rayleigh fading.
pub fn scenario_from(family: Family, nmcr: f64, nsnr_db: f64) -> Result<ScenarioSpec, ModelError> {
    if !nsnr_db.is_finite() {
        return Err(ModelError::Domain { what: "NSNR", value: nsnr_db });
    }
    let ratio = mcr(family, nmcr)?;
    let clipped = 10f64.powf(nsnr_db / 10.0);
    let capacity = clipped / ratio;
    let mean = nmcr * capacity;
    let arrival = match family {
        Family::OnePoint => EnergyArrivalModel::OnePoint { energy: mean },
        Family::Bernoulli => EnergyArrivalModel::Bernoulli { prob: nmcr, magnitude: capacity },
        Family::Exponential => EnergyArrivalModel::Exponential { rate: 1.0 / mean },
        Family::Uniform => EnergyArrivalModel::Uniform { upper: 2.0 * mean },
    };
    arrival.validate()?;
    Ok(ScenarioSpec { capacity, arrival, channel: ChannelModel::Rayleigh, family, nmcr, nsnr_db })
}

/// Observable system state at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SystemState {
    pub battery: f64,
    pub gamma: f64,
    /// Energy that will arrive during this slot, when known in advance.
    pub lookahead_energy: Option<f64>,
    /// Channel SNR coefficient of the next slot, when known in advance.
    pub lookahead_gamma: Option<f64>,
}

impl SystemState {
    pub fn new(battery: f64, gamma: f64) -> Self {
        Self { battery, gamma, lookahead_energy: None, lookahead_gamma: None }
    }
}
