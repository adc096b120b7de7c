//! Plain-text checkpoints of an agent.
//!
//! One `key = value` pair per line; lines starting with `#` are ignored.
//! Floats are written in Rust's shortest round-trip form, vectors as
//! space-separated lists. The replay memory is not saved: a restored agent
//! starts with an empty memory.
//!
//! ```text
//! format = ehpc-agent/1
//! scheme = CLK
//! policy = robust
//! capacity = 12.5
//! theta = 0.1 0.54 -6.9
//! g_hat = 1.93
//! aux.e = 0.8          (optimistic agents, with aux.c_hat)
//! aux.p = 0.47         (robust agents)
//! steps = 5000
//! adam.t = 5000
//! adam.m = ...
//! adam.v = ...
//! config.alpha1 = 0.001   (and the remaining AgentConfig fields)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write;

use super::agent::{AgentConfig, AgentError, AgentState, AuxEstimates};

const FORMAT: &str = "ehpc-agent/1";

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

impl AgentState {
    pub fn to_snapshot(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("format", FORMAT.into());
        kv("scheme", self.scheme.to_string());
        kv("policy", self.kind.as_str().into());
        kv("capacity", format!("{:?}", self.capacity));
        kv("theta", list(&self.reparam.theta));
        kv("g_hat", format!("{:?}", self.g_hat));
        match self.aux {
            AuxEstimates::Optimistic { e, c_hat } => {
                kv("aux.e", format!("{e:?}"));
                kv("aux.c_hat", format!("{c_hat:?}"));
            }
            AuxEstimates::Robust { p } => kv("aux.p", format!("{p:?}")),
        }
        kv("steps", self.steps.to_string());
        kv("adam.t", self.adam.t.to_string());
        kv("adam.m", list(&self.adam.m));
        kv("adam.v", list(&self.adam.v));
        let c = &self.config;
        for (k, v) in [
            ("alpha1", c.alpha1),
            ("alpha2", c.alpha2),
            ("alpha3", c.alpha3),
            ("epsilon", c.epsilon),
            ("adam_beta1", c.adam_beta1),
            ("adam_beta2", c.adam_beta2),
            ("adam_eps", c.adam_eps),
            ("initial_q", c.initial_q),
            ("initial_gamma_hat", c.initial_gamma_hat),
            ("initial_slope", c.initial_slope),
            ("initial_g_hat", c.initial_g_hat),
        ] {
            kv(&format!("config.{k}"), format!("{v:?}"));
        }
        kv("config.memory_capacity", c.memory_capacity.to_string());
        kv("config.minibatch", c.minibatch.to_string());
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self, AgentError> {
        let err = |m: String| AgentError::Snapshot(m);
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected `key = value`", n + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key `{}`", k.trim())));
            }
        }
        let get = |k: &str| map.get(k).ok_or_else(|| err(format!("missing key `{k}`")));
        let num = |k: &str| -> Result<f64, AgentError> {
            get(k)?.parse::<f64>().map_err(|e| err(format!("`{k}`: {e}")))
        };
        let int = |k: &str| -> Result<u64, AgentError> {
            get(k)?.parse::<u64>().map_err(|e| err(format!("`{k}`: {e}")))
        };
        let vec = |k: &str| -> Result<Vec<f64>, AgentError> {
            get(k)?
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| err(format!("`{k}`: {e}"))))
                .collect()
        };
        if get("format")? != FORMAT {
            return Err(err(format!("unsupported format `{}`", get("format")?)));
        }
        let config = AgentConfig {
            alpha1: num("config.alpha1")?,
            alpha2: num("config.alpha2")?,
            alpha3: num("config.alpha3")?,
            memory_capacity: int("config.memory_capacity")? as usize,
            minibatch: int("config.minibatch")? as usize,
            epsilon: num("config.epsilon")?,
            adam_beta1: num("config.adam_beta1")?,
            adam_beta2: num("config.adam_beta2")?,
            adam_eps: num("config.adam_eps")?,
            initial_q: num("config.initial_q")?,
            initial_gamma_hat: num("config.initial_gamma_hat")?,
            initial_slope: num("config.initial_slope")?,
            initial_g_hat: num("config.initial_g_hat")?,
        };
        let mut agent =
            AgentState::new(get("scheme")?.parse()?, get("policy")?.parse()?, config, num("capacity")?)?;
        let theta = vec("theta")?;
        if theta.len() != agent.reparam.theta.len() {
            return Err(err(format!("theta has {} entries, expected {}", theta.len(), agent.reparam.theta.len())));
        }
        agent.reparam.theta = theta;
        agent.g_hat = num("g_hat")?;
        agent.aux = match agent.aux {
            AuxEstimates::Optimistic { .. } => {
                AuxEstimates::Optimistic { e: num("aux.e")?, c_hat: num("aux.c_hat")? }
            }
            AuxEstimates::Robust { .. } => AuxEstimates::Robust { p: num("aux.p")? },
        };
        agent.steps = int("steps")?;
        agent.adam.t = int("adam.t")?;
        let (m, v) = (vec("adam.m")?, vec("adam.v")?);
        if m.len() != agent.adam.m.len() || v.len() != agent.adam.v.len() {
            return Err(err("optimizer moments have the wrong length".into()));
        }
        agent.adam.m = m;
        agent.adam.v = v;
        Ok(agent)
    }
}
