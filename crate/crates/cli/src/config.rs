//! Experiment configuration files.
//!
//! A config is a TOML document whose keys override a preset. Nested tables
//! (`agent`, `schedule`, `solve`, `grids.*`) are laid over the preset values
//! field by field; unknown keys anywhere are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ehpc::model::{mcr, ChannelModel, Family};
use ehpc::sim::{EvalPlan, Scheme};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn plan(self) -> EvalPlan {
        match self {
            Preset::Desk => EvalPlan::desk(),
            Preset::Paper => EvalPlan::paper(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTables {
    pub none: Option<toml::Table>,
    pub energy: Option<toml::Table>,
    pub channel: Option<toml::Table>,
}

/// The file as written; every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub schemes: Option<Vec<String>>,
    pub families: Option<Vec<Family>>,
    pub nmcr: Option<Vec<f64>>,
    pub nsnr_db: Option<Vec<f64>>,
    pub channel: Option<ChannelModel>,
    pub episodes: Option<usize>,
    pub steps_per_episode: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub common_random_numbers: Option<bool>,
    pub lookahead_noise: Option<f64>,
    pub agent: Option<toml::Table>,
    pub schedule: Option<toml::Table>,
    pub solve: Option<toml::Table>,
    pub grids: Option<GridTables>,
}

/// Values given on the command line; they take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub schemes: Option<Vec<String>>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub plan: EvalPlan,
    pub preset: Preset,
    pub output_dir: PathBuf,
    /// SHA-256 of the resolved plan, excluding the cache location.
    pub config_hash: String,
}

impl Experiment {
    /// First line of every emitted artifact.
    pub fn provenance(&self) -> String {
        format!("ehpc {} config={} seed={}", ehpc::VERSION, self.config_hash, self.plan.seed)
    }
}

fn overlay<T: Clone + Serialize + DeserializeOwned>(base: &T, table: Option<&toml::Table>, name: &str) -> Result<T, ConfigError> {
    let Some(table) = table else { return Ok(base.clone()) };
    let mut merged = toml::Table::try_from(base).map_err(|e| ConfigError(format!("{name}: {e}")))?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError(format!("[{name}] {}", e.message())))
}

pub fn parse_schemes(names: &[String]) -> Result<Vec<Scheme>, ConfigError> {
    names
        .iter()
        .flat_map(|n| n.split(','))
        .filter(|n| !n.trim().is_empty())
        .map(|n| Scheme::from_str(n).map_err(|e| ConfigError(format!("schemes: {e}"))))
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, flags: &Overrides) -> Result<Experiment, ConfigError> {
        let preset = flags.preset.or(self.preset).unwrap_or_default();
        let mut plan = preset.plan();
        if let Some(v) = self.seed {
            plan.seed = v;
        }
        if let Some(v) = &self.families {
            plan.families = v.clone();
        }
        if let Some(v) = &self.nmcr {
            plan.nmcr = v.clone();
        }
        if let Some(v) = &self.nsnr_db {
            plan.nsnr_db = v.clone();
        }
        if let Some(v) = self.channel {
            plan.channel = v;
        }
        if let Some(v) = self.episodes {
            plan.episodes = v;
        }
        if let Some(v) = self.steps_per_episode {
            plan.steps_per_episode = v;
        }
        if let Some(v) = self.common_random_numbers {
            plan.common_random_numbers = v;
        }
        if let Some(v) = self.lookahead_noise {
            plan.lookahead_noise = v;
        }
        plan.agent = overlay(&plan.agent, self.agent.as_ref(), "agent")?;
        plan.schedule = overlay(&plan.schedule, self.schedule.as_ref(), "schedule")?;
        plan.solve = overlay(&plan.solve, self.solve.as_ref(), "solve")?;
        let g = self.grids.clone().unwrap_or_default();
        plan.grids.none = overlay(&plan.grids.none, g.none.as_ref(), "grids.none")?;
        plan.grids.energy = overlay(&plan.grids.energy, g.energy.as_ref(), "grids.energy")?;
        plan.grids.channel = overlay(&plan.grids.channel, g.channel.as_ref(), "grids.channel")?;

        if let Some(s) = flags.schemes.as_ref().or(self.schemes.as_ref()) {
            plan.schemes = parse_schemes(s)?;
        }
        if plan.schemes.is_empty() {
            return Err(ConfigError("schemes: the list is empty".into()));
        }
        plan = plan.with_required_baselines();
        if let Some(v) = flags.seed {
            plan.seed = v;
        }
        for &family in &plan.families {
            for &x in &plan.nmcr {
                mcr(family, x).map_err(|e| ConfigError(format!("nmcr: {e} for family {family}")))?;
            }
        }
        if let Some(bad) = plan.nsnr_db.iter().find(|x| !x.is_finite()) {
            return Err(ConfigError(format!("nsnr_db: {bad} is not finite")));
        }
        plan.validate().map_err(|e| ConfigError(e.to_string()))?;

        let config_hash = {
            let mut hashed = plan.clone();
            hashed.cache_dir = None;
            hex::encode(Sha256::digest(serde_json::to_vec(&hashed).unwrap()))
        };
        plan.cache_dir = flags.cache_dir.clone().or_else(|| self.cache_dir.clone());
        let output_dir = flags.output_dir.clone().or_else(|| self.output_dir.clone()).unwrap_or_else(|| "out".into());
        Ok(Experiment { plan, preset, output_dir, config_hash })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ehpc::rl::AgentConfig;
    use ehpc::sim::Schedule;

    #[test]
    fn empty_config_is_the_desk_preset() {
        let e = ExperimentConfig::parse("").unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(e.plan, EvalPlan::desk());
        assert_eq!(e.plan.agent, AgentConfig::default());
        assert_eq!(e.plan.schedule, Schedule::default());
        assert_eq!(e.plan.agent.minibatch, 64);
        assert_eq!(e.plan.agent.memory_capacity, 128);
        assert_eq!(e.plan.episodes, 50);
        assert_eq!(e.plan.steps_per_episode, 5000);
    }

    #[test]
    fn paper_preset_matches_the_published_protocol() {
        let e = ExperimentConfig::parse("preset = \"paper\"").unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(e.plan.episodes, 1000);
        assert_eq!(e.plan.steps_per_episode, 10_000);
        assert_eq!(e.plan.nsnr_db, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(e.plan.nmcr, vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn nested_tables_overlay_and_reject_unknown_keys() {
        let text = "seed = 4\n[agent]\nminibatch = 32\n[grids.none]\nbattery_levels = 40\n";
        let e = ExperimentConfig::parse(text).unwrap().resolve(&Overrides::default()).unwrap();
        assert_eq!(e.plan.agent.minibatch, 32);
        assert_eq!(e.plan.agent.memory_capacity, 128);
        assert_eq!(e.plan.grids.none.battery_levels, 40);
        assert_eq!(e.plan.seed, 4);

        let bad = ExperimentConfig::parse("[agent]\nminibtch = 3\n").unwrap().resolve(&Overrides::default());
        assert!(bad.unwrap_err().0.contains("minibtch"));
        let err = ExperimentConfig::parse("seed = 1\nepisode = 3\n").unwrap_err();
        assert!(err.0.contains("line 2"), "{err}");
    }

    #[test]
    fn flags_take_precedence() {
        let cfg = ExperimentConfig::parse("seed = 4\nschemes = [\"OCA\"]\noutput_dir = \"a\"").unwrap();
        let flags = Overrides {
            seed: Some(9),
            schemes: Some(vec!["RCA,ELK-RCA".into()]),
            output_dir: Some("b".into()),
            ..Default::default()
        };
        let e = cfg.resolve(&flags).unwrap();
        assert_eq!(e.plan.seed, 9);
        assert_eq!(e.output_dir, PathBuf::from("b"));
        assert_eq!(e.plan.schemes, vec![Scheme::Rca, Scheme::ElkRca, Scheme::Opt, Scheme::ElkOpt]);
        let plain = cfg.resolve(&Overrides::default()).unwrap();
        assert_ne!(plain.config_hash, e.config_hash);
    }

    #[test]
    fn invalid_nmcr_names_the_field() {
        let err = ExperimentConfig::parse("nmcr = [1.5]").unwrap().resolve(&Overrides::default()).unwrap_err();
        assert!(err.0.starts_with("nmcr"), "{err}");
    }
}
