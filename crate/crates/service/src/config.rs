//! Flat JSON service configuration with `TASTEBUD_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use tastebud::catalog::{DietType, KernelConfig};
use tastebud::elicitation::{StrategyConfig, Updater, Selector, DEFAULT_CLAMP, DEFAULT_FRACTION, DEFAULT_ITERATIONS};
use tastebud::nutrition::DEFAULT_POOL_SIZE;
use tastebud::recommender::DEFAULT_RECOMMENDATIONS;

pub const ENV_PREFIX: &str = "TASTEBUD_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid: {0}")]
    Parse(String),
    #[error("config is not valid: {0}")]
    Invalid(String),
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("sessions")
}

fn default_diets() -> Vec<DietType> {
    DietType::ALL.to_vec()
}

/// Every key is top-level so each one can be overridden from the
/// environment as `TASTEBUD_<KEY>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub catalog_path: PathBuf,
    pub embeddings_path: PathBuf,
    #[serde(default)]
    pub delta_percentile: Option<f64>,
    #[serde(default)]
    pub delta_absolute: Option<f64>,
    #[serde(default = "default_pair_sample_size")]
    pub pair_sample_size: usize,
    #[serde(default)]
    pub kernel_seed: u64,
    #[serde(default = "default_updater")]
    pub updater: Updater,
    #[serde(default = "default_selector")]
    pub selector: Selector,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_clamp")]
    pub exponent_clamp: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_recommendations")]
    pub recommendations: usize,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Seconds without activity before an open session is abandoned.
    #[serde(default = "default_ttl")]
    pub session_ttl_secs: u64,
    #[serde(default = "default_diets")]
    pub diets: Vec<DietType>,
}

fn default_pair_sample_size() -> usize {
    KernelConfig::default().pair_sample_size
}
fn default_updater() -> Updater {
    Updater::Le
}
fn default_selector() -> Selector {
    Selector::Ee
}
fn default_clamp() -> f64 {
    DEFAULT_CLAMP
}
fn default_iterations() -> u32 {
    DEFAULT_ITERATIONS
}
fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}
fn default_recommendations() -> usize {
    DEFAULT_RECOMMENDATIONS
}
fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}
fn default_ttl() -> u64 {
    3600
}

impl ServiceConfig {
    /// Defaults for everything except the two input files.
    pub fn new(catalog_path: impl Into<PathBuf>, embeddings_path: impl Into<PathBuf>) -> Self {
        let mut doc = Map::new();
        doc.insert("catalog_path".into(), Value::String(catalog_path.into().display().to_string()));
        doc.insert("embeddings_path".into(), Value::String(embeddings_path.into().display().to_string()));
        serde_json::from_value(Value::Object(doc)).expect("defaults deserialize")
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::from_json_with_env(&text, std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Parses `text` and overlays `TASTEBUD_<KEY>` variables from `env`.
    /// Values are read as JSON when they parse, otherwise as plain strings.
    pub fn from_json_with_env(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut doc: Map<String, Value> =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (key, raw) in env {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
            doc.insert(name.to_ascii_lowercase(), value);
        }
        serde_json::from_value(Value::Object(doc)).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Checks value ranges and that the input files exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_values()?;
        for path in [&self.catalog_path, &self.embeddings_path] {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn validate_values(&self) -> Result<(), ConfigError> {
        if self.iterations < 3 {
            return Err(ConfigError::Invalid(format!("iterations {} must be >= 3", self.iterations)));
        }
        if self.recommendations == 0 || self.pool_size < self.recommendations {
            return Err(ConfigError::Invalid(format!(
                "need pool_size ({}) >= recommendations ({}) >= 1",
                self.pool_size, self.recommendations
            )));
        }
        if self.diets.is_empty() {
            return Err(ConfigError::Invalid("diets must not be empty".into()));
        }
        self.kernel().delta_rule().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.strategy().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn kernel(&self) -> KernelConfig {
        KernelConfig {
            delta_percentile: self.delta_percentile,
            delta_absolute: self.delta_absolute,
            pair_sample_size: self.pair_sample_size,
            rng_seed: self.kernel_seed,
            ..KernelConfig::default()
        }
    }

    pub fn strategy(&self) -> StrategyConfig {
        StrategyConfig {
            updater: self.updater,
            selector: self.selector,
            beta: self.beta,
            exponent_clamp: self.exponent_clamp,
            fraction: self.fraction,
            rng_seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"catalog_path": "c.jsonl", "embeddings_path": "e.bin"}"#;

    #[test]
    fn defaults() {
        let c = ServiceConfig::from_json_with_env(BASE, []).unwrap();
        assert_eq!(c.iterations, 15);
        assert_eq!(c.pool_size, 500);
        assert_eq!(c.recommendations, 10);
        assert_eq!(c.fraction, 0.01);
        assert_eq!(c.beta, None);
        assert_eq!(c.diets.len(), 5);
        c.validate_values().unwrap();
        assert_eq!(c, ServiceConfig::new("c.jsonl", "e.bin"));
    }

    #[test]
    fn env_overrides() {
        let env = [
            ("TASTEBUD_ITERATIONS".to_string(), "7".to_string()),
            ("TASTEBUD_BIND".to_string(), "0.0.0.0:9000".to_string()),
            ("TASTEBUD_BETA".to_string(), "0.001".to_string()),
            ("OTHER_ITERATIONS".to_string(), "3".to_string()),
        ];
        let c = ServiceConfig::from_json_with_env(BASE, env).unwrap();
        assert_eq!(c.iterations, 7);
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.beta, Some(0.001));
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |extra: &str| {
            let text = format!(r#"{{"catalog_path": "c", "embeddings_path": "e", {extra}}}"#);
            ServiceConfig::from_json_with_env(&text, []).and_then(|c| c.validate_values())
        };
        assert!(bad(r#""iterations": 2"#).is_err());
        assert!(bad(r#""pool_size": 5, "recommendations": 10"#).is_err());
        assert!(bad(r#""delta_percentile": 5, "delta_absolute": 0.5"#).is_err());
        assert!(bad(r#""unknown_key": 1"#).is_err());
        assert!(bad(r#""fraction": 1.5"#).is_err());
        assert!(bad(r#""iterations": 3"#).is_ok());
    }

    #[test]
    fn missing_files_fail_validation() {
        let c = ServiceConfig::new("/nonexistent/c.jsonl", "/nonexistent/e.bin");
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }
}
