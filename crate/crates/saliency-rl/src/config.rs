//! Experiment configuration as JSON.

use std::path::Path;

use saliency_core::agent::{AgentConfig, AgentParams, PerceptionParams, Variant};
use saliency_core::env::EnvConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentParams,
    #[serde(default)]
    pub perception: PerceptionParams,
    pub seeds: Vec<u64>,
    pub train_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        RunConfig::from_json(&text)
    }

    /// All fields, defaults included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig { variant: self.variant, env: self.env.clone(), agent: self.agent.clone(), perception: self.perception.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        if self.eval_every == 0 {
            return Err(ConfigError::Invalid("eval_every must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(ConfigError::Invalid("eval_episodes must be positive".into()));
        }
        self.agent_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"variant": "baseline", "seeds": [1], "train_steps": 100, "eval_every": 50, "eval_episodes": 2}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.env, EnvConfig::default());
        assert_eq!(c.agent.batch_size, 32);
        let again = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace(r#""train_steps": 100, "#, "");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("train_steps"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace('}', r#", "learning_rate": 1}"#);
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        let nested = MINIMAL.replace('}', r#", "agent": {"gama": 0.9}}"#);
        assert!(RunConfig::from_json(&nested).unwrap_err().to_string().contains("gama"));
    }

    #[test]
    fn semantic_checks() {
        let text = MINIMAL.replace("[1]", "[]");
        assert!(matches!(RunConfig::from_json(&text), Err(ConfigError::Invalid(_))));
    }
}
