use std::path::Path;

use psreg::register::PipelineConfig;
use psreg::scene::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The checked-in defaults document. A test keeps it equal to
/// `ExperimentConfig::default()`.
pub const DEFAULTS_JSON: &str = include_str!("../defaults.json");

/// One experiment: how scenes are made, how they are registered, and which
/// seeds to run. Every field is optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    /// One scene pair per seed.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { scene: SceneConfig::default(), pipeline: PipelineConfig::default(), seeds: (0..10).collect() }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_json(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scene.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(CliError::Config(format!("seed {dup} is listed twice")));
        }
        Ok(())
    }

    /// Replaces the seed list by `start, start + 1, …` of the same length.
    pub fn with_seed_start(mut self, start: u64) -> Self {
        let n = self.seeds.len() as u64;
        self.seeds = (start..start + n).collect();
        self
    }
}

/// Seed of the simulated prior for the pair generated from `pair_seed`.
pub fn prior_seed(pair_seed: u64) -> u64 {
    pair_seed ^ 0x7072_696f_7273_6565
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_in_defaults_match_code() {
        let parsed = ExperimentConfig::from_json(DEFAULTS_JSON).unwrap();
        assert_eq!(parsed, ExperimentConfig::default());
        let json: serde_json::Value = serde_json::from_str(DEFAULTS_JSON).unwrap();
        assert_eq!(json, serde_json::to_value(ExperimentConfig::default()).unwrap());
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"sedes": [1]}"#), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"scene": {"points": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"pipeline": {"iterations": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seeds": [4, 4]}"#).is_err());
    }

    #[test]
    fn seed_start_keeps_length() {
        let c = ExperimentConfig::default().with_seed_start(100);
        assert_eq!(c.seeds, (100..110).collect::<Vec<_>>());
    }
}
