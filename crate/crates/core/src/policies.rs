//! Closed-form power-control policies and relative-value functions.
//!
//! The two analytic baselines (`h1` with the clipped greedy policy for
//! one-point arrivals, `h2` with the maximin policy for Bernoulli arrivals)
//! solve the quasi-static Bellman equation exactly and double as oracles for
//! the numerical solvers. The clipped affine policies are the maximizers of
//! the two-slot surrogate problems built on the parametric relative value
//! `ĥ_{q,γ̂}(b) = log(1 + γ̂qb)/q`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{rate_derivative, rate_unchecked};

/// Below this slope the relative value is evaluated by its `q → 0` limit.
pub const SMALL_SLOPE: f64 = 1e-9;

/// Scan cap for the maximin horizon.
pub const MAX_HORIZON: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("maximin horizon exceeded {MAX_HORIZON} at x={x}, p={p}")]
    HorizonCap { x: f64, p: f64 },
    #[error("action {u} infeasible for battery {b}")]
    InfeasibleAction { u: f64, b: f64 },
    #[error("effective SNR coefficient must be positive, got {0}")]
    EffectiveSnr(f64),
    #[error("linear policy slope must be positive for a fixed point")]
    NoFixedPoint,
}

/// Parameters of the optimistic clipped affine policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimisticParams {
    /// Dynamic clipped-mean estimate of the next arrival.
    pub e: f64,
    pub q: f64,
    pub gamma_hat: f64,
}

/// Parameters of the robust clipped affine policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    /// Dynamic mean-to-capacity ratio estimate. Values up to 1 are accepted
    /// (energy lookahead can report a full-capacity arrival).
    pub p: f64,
    pub q: f64,
    pub gamma_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelValueParams {
    pub q: f64,
    pub gamma_hat: f64,
}

/// Relative value with an SNR coefficient affine in the observed channel:
/// `ĥ_{q, sγ + γ̂₀}(b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelValueExtParams {
    pub q: f64,
    pub gamma0: f64,
    pub slope: f64,
}

impl RelValueExtParams {
    pub fn effective(&self, gamma: f64) -> Result<RelValueParams, PolicyError> {
        let gamma_hat = self.slope * gamma + self.gamma0;
        if !(gamma_hat > 0.0) {
            return Err(PolicyError::EffectiveSnr(gamma_hat));
        }
        Ok(RelValueParams { q: self.q, gamma_hat })
    }
}

pub fn clipped_greedy(x: f64, e: f64) -> f64 {
    x.min(e)
}

fn check_probability(p: f64) -> Result<(), PolicyError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(PolicyError::Probability(p))
    }
}

/// `M̃(x) = min{i ≥ 1 : [1 + p(x + i)](1 − p)^i < 1}`.
pub fn maximin_horizon(x: f64, p: f64) -> Result<u64, PolicyError> {
    check_probability(p)?;
    let log_keep = (-p).ln_1p();
    for i in 1..=MAX_HORIZON {
        let fi = i as f64;
        if (1.0 + p * (x + fi)) * (fi * log_keep).exp() < 1.0 {
            return Ok(i);
        }
    }
    Err(PolicyError::HorizonCap { x, p })
}

fn maximin_with_horizon(x: f64, p: f64, horizon: u64) -> f64 {
    let m = horizon as f64;
    // 1 − (1−p)^M, computed without cancellation for small p.
    let denom = -(m * (-p).ln_1p()).exp_m1();
    (p * (x + m) / denom - 1.0).clamp(0.0, x)
}

/// Maximin optimal policy for Bernoulli arrivals in the quasi-static channel.
pub fn maximin_policy(x: f64, p: f64) -> Result<f64, PolicyError> {
    let m = maximin_horizon(x, p)?;
    Ok(maximin_with_horizon(x, p, m))
}

/// Relative value for one-point arrivals: `∫₀ˣ r′(min(v, e)) dv`.
pub fn h1(x: f64, e: f64) -> f64 {
    if x < e {
        rate_unchecked(x)
    } else {
        rate_unchecked(e) + rate_derivative(e) * (x - e)
    }
}

/// Relative value for Bernoulli arrivals, evaluated as the finite sum of
/// discounted rates along the maximin allocation.
pub fn h2(x: f64, p: f64) -> Result<f64, PolicyError> {
    let horizon = maximin_horizon(x, p)?;
    let keep = 1.0 - p;
    let mut residual = x;
    let mut discount = 1.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        let m = maximin_horizon(residual, p)?;
        let u = maximin_with_horizon(residual, p, m);
        total += discount * rate_unchecked(u);
        residual = (residual - u).max(0.0);
        discount *= keep;
    }
    Ok(total)
}

/// `ĥ_{q,γ̂}(b) = log(1 + γ̂qb)/q`, continuous at `q = 0` where it is `γ̂b`.
pub fn rel_value(b: f64, params: RelValueParams) -> f64 {
    let RelValueParams { q, gamma_hat } = params;
    if q < SMALL_SLOPE {
        return gamma_hat * b;
    }
    (gamma_hat * q * b).ln_1p() / q
}

pub fn rel_value_ext(b: f64, gamma: f64, params: RelValueExtParams) -> Result<f64, PolicyError> {
    Ok(rel_value(b, params.effective(gamma)?))
}

/// Value of `ĥ_{q,γ̂}(b)` and its partial derivatives in `q` and `γ̂`.
pub fn rel_value_partials(b: f64, params: RelValueParams) -> (f64, f64, f64) {
    let RelValueParams { q, gamma_hat } = params;
    let d_gamma_hat = b / (1.0 + gamma_hat * q * b);
    let z = gamma_hat * q * b;
    if q < SMALL_SLOPE {
        return (gamma_hat * b, -0.5 * gamma_hat * gamma_hat * b * b, b);
    }
    let value = z.ln_1p() / q;
    // ∂/∂q = [z/(1+z) − log(1+z)]/q², expanded as a series when z is small.
    let d_q = if z.abs() < 1e-3 {
        let gb = gamma_hat * b;
        gb * gb * (-0.5 + z * (2.0 / 3.0) - z * z * 0.75 + z * z * z * 0.8)
    } else {
        (z / (1.0 + z) - z.ln_1p()) / (q * q)
    };
    (value, d_q, d_gamma_hat)
}

/// Optimistic clipped affine policy. With `γ = 0` it spends only what would
/// otherwise overflow the battery.
pub fn optimistic_policy(b: f64, gamma: f64, c: f64, params: OptimisticParams) -> f64 {
    let OptimisticParams { e, q, gamma_hat } = params;
    let floor = (b + e - c).max(0.0).min(b);
    if gamma <= 0.0 {
        return floor;
    }
    let unclipped = (q * (b + e) - 1.0 / gamma + 1.0 / gamma_hat) / (1.0 + q);
    unclipped.max(floor).min(b)
}

/// Robust clipped affine policy. With `γ = 0` it spends nothing.
pub fn robust_policy(b: f64, gamma: f64, params: RobustParams) -> f64 {
    let RobustParams { p, q, gamma_hat } = params;
    if gamma <= 0.0 {
        return 0.0;
    }
    let keep = 1.0 - p;
    let unclipped = (q * b - keep / gamma + 1.0 / gamma_hat) / (keep + q);
    unclipped.max(0.0).min(b)
}

fn check_action(u: f64, b: f64) -> Result<(), PolicyError> {
    if u < 0.0 || u > b || u.is_nan() {
        Err(PolicyError::InfeasibleAction { u, b })
    } else {
        Ok(())
    }
}

/// Optimistic surrogate: `r(γu) + ĥ(b − u + min(e, c − b + u))`.
pub fn problem3_objective(
    u: f64,
    b: f64,
    gamma: f64,
    c: f64,
    params: OptimisticParams,
) -> Result<f64, PolicyError> {
    check_action(u, b)?;
    let rv = RelValueParams { q: params.q, gamma_hat: params.gamma_hat };
    let stored = params.e.min(c - b + u);
    Ok(rate_unchecked(gamma * u) + rel_value(b - u + stored, rv))
}

/// Pessimistic surrogate: `r(γu) + (1 − p)ĥ(b − u) + pĥ(c)`.
pub fn problem4_objective(
    u: f64,
    b: f64,
    gamma: f64,
    c: f64,
    params: RobustParams,
) -> Result<f64, PolicyError> {
    check_action(u, b)?;
    let rv = RelValueParams { q: params.q, gamma_hat: params.gamma_hat };
    let p = params.p;
    Ok(rate_unchecked(gamma * u) + (1.0 - p) * rel_value(b - u, rv) + p * rel_value(c, rv))
}

/// `n`-fold iterate of `x ↦ (1 − q)x + e`, the battery map of the linear
/// policy `qx` under constant arrivals.
pub fn linear_policy_orbit(x: f64, q: f64, e: f64, n: u32) -> Result<f64, PolicyError> {
    if !(q > 0.0) {
        return Err(PolicyError::NoFixedPoint);
    }
    let fixed = e / q;
    Ok((1.0 - q).powi(n as i32) * (x - fixed) + fixed)
}
