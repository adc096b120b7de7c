//! On-disk cache of solved baselines.
//!
//! Each solution is stored as one JSON document named after the SHA-256 of
//! its key: cache format version, scenario, grid, lookahead mode and solver
//! options. Files are written to a temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::solve::{policy_iteration, PolicySolution, SolveOptions};
use super::{DiscreteMdp, GridSpec, Lookahead, MdpError};
use crate::model::ScenarioSpec;

pub const CACHE_FORMAT: u32 = 1;

#[derive(Serialize)]
struct Key<'a> {
    format: u32,
    scenario: &'a ScenarioSpec,
    grid: &'a GridSpec,
    lookahead: Lookahead,
    options: &'a SolveOptions,
}

pub fn cache_key(scenario: &ScenarioSpec, grid: &GridSpec, lookahead: Lookahead, options: &SolveOptions) -> String {
    let key = Key { format: CACHE_FORMAT, scenario, grid, lookahead, options };
    let text = serde_json::to_string(&key).expect("cache key serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn cache_path(root: &Path, key: &str) -> PathBuf {
    root.join(format!("pi-{key}.json"))
}

pub fn load(root: &Path, key: &str) -> Option<PolicySolution> {
    let text = fs::read_to_string(cache_path(root, key)).ok()?;
    match serde_json::from_str(&text) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("ignoring unreadable cache entry {key}: {e}");
            None
        }
    }
}

pub fn store(root: &Path, key: &str, solution: &PolicySolution) -> Result<(), MdpError> {
    fs::create_dir_all(root).map_err(|e| MdpError::Cache(e.to_string()))?;
    let path = cache_path(root, key);
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let text = serde_json::to_string(solution).map_err(|e| MdpError::Cache(e.to_string()))?;
    fs::write(&tmp, text).map_err(|e| MdpError::Cache(e.to_string()))?;
    fs::rename(&tmp, &path).map_err(|e| MdpError::Cache(e.to_string()))
}

/// Solves or loads a baseline. Returns the solution and whether it came
/// from the cache.
pub fn solve_cached(
    root: Option<&Path>,
    scenario: &ScenarioSpec,
    grid: GridSpec,
    lookahead: Lookahead,
    options: &SolveOptions,
) -> Result<(PolicySolution, bool), MdpError> {
    let key = cache_key(scenario, &grid, lookahead, options);
    if let Some(root) = root {
        if let Some(s) = load(root, &key) {
            return Ok((s, true));
        }
    }
    let mdp = DiscreteMdp::build(scenario, grid, lookahead)?;
    let solution = policy_iteration(&mdp, options)?;
    if let Some(root) = root {
        store(root, &key, &solution)?;
    }
    Ok((solution, false))
}
