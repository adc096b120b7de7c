//! Unconstrained coordinates for the relative-value parameters:
//! `q = logistic(θ₁)`, `γ̂ (or γ̂₀) = softplus(θ₂)`, `s = softplus(θ₃)`.

use crate::policies::{RelValueExtParams, RelValueParams};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of softplus; `y = 0` maps to `-∞`, which pins the parameter at 0.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 35.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReparamVars {
    pub theta: Vec<f64>,
}

impl ReparamVars {
    pub fn basic(q: f64, gamma_hat: f64) -> Self {
        Self { theta: vec![logit(q), softplus_inv(gamma_hat)] }
    }

    pub fn extended(q: f64, gamma0: f64, slope: f64) -> Self {
        Self { theta: vec![logit(q), softplus_inv(gamma0), softplus_inv(slope)] }
    }

    pub fn is_extended(&self) -> bool {
        self.theta.len() == 3
    }

    pub fn q(&self) -> f64 {
        sigmoid(self.theta[0])
    }

    /// `γ̂` for basic agents, `γ̂₀` for channel-lookahead agents.
    pub fn gamma_hat(&self) -> f64 {
        softplus(self.theta[1])
    }

    pub fn slope(&self) -> f64 {
        self.theta.get(2).copied().map(softplus).unwrap_or(0.0)
    }

    pub fn rel_params(&self) -> RelValueParams {
        RelValueParams { q: self.q(), gamma_hat: self.gamma_hat() }
    }

    pub fn ext_params(&self) -> RelValueExtParams {
        RelValueExtParams { q: self.q(), gamma0: self.gamma_hat(), slope: self.slope() }
    }

    /// `(dq/dθ₁, dγ̂/dθ₂, ds/dθ₃)`.
    pub fn jacobian(&self) -> [f64; 3] {
        let q = self.q();
        [
            q * (1.0 - q),
            sigmoid(self.theta[1]),
            self.theta.get(2).copied().map(sigmoid).unwrap_or(0.0),
        ]
    }
}
