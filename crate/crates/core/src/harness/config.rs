use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::imitation::{DaggerConfig, DaggerVariant};
use crate::rl::{AlgorithmConfigs, Budget};

/// Everything needed to reproduce a benchmark or DAgger suite. Every field
/// has a default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub budget: Budget,
    pub algorithms: AlgorithmConfigs,
    pub dagger: DaggerConfig,
    /// Variants run by the DAgger suite.
    pub variants: Vec<DaggerVariant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            budget: Budget::default(),
            algorithms: AlgorithmConfigs::default(),
            dagger: DaggerConfig::default(),
            variants: DaggerVariant::ALL.to_vec(),
            seeds: vec![0],
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one dagger variant is required".into()));
        }
        if self.budget.steps_per_episode == 0 {
            return Err(Error::Config("budget.steps_per_episode must be at least 1".into()));
        }
        self.env.validate()?;
        self.algorithms.ddpg.validate()?;
        self.algorithms.ppo.validate()?;
        self.algorithms.trpo.validate()?;
        self.dagger.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn nested_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            "seeds = [1, 2]\n[env]\ntarget_velocity = 0.0\n[algorithms.ddpg]\ntau = 0.01\n[dagger]\nvariant = \"return_gated\"\nrollout_horizon = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.env.target_velocity, 0.0);
        assert_eq!(cfg.algorithms.ddpg.tau, 0.01);
        assert_eq!(cfg.algorithms.ppo, Default::default());
        assert_eq!(cfg.dagger.variant, DaggerVariant::ReturnGated);
        assert_eq!(cfg.dagger.rollout_horizon, Some(10));
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in ["sede = [1]", "[env]\ndtt = 0.1", "[algorithms.ppo]\nclip = 0.3", "[bogus]"] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("seeds = []"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_env_is_rejected() {
        assert!(ExperimentConfig::from_toml_str("[env]\ndt = 0.0").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig { seeds: vec![3, 4], ..Default::default() };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
