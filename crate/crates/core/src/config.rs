//! Run configuration: every stage's settings in one serializable snapshot.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::DEFAULT_MATCH_THRESHOLD;
use crate::eval::EvalConfig;
use crate::filter::FilterConfig;
use crate::gateway::BackendConfig;
use crate::graph::DEFAULT_LINK_THRESHOLD;
use crate::rollout::RolloutConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub rollout: RolloutConfig,
    pub filter: FilterConfig,
    pub eval: EvalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    /// Minimum menu-match score for the deterministic oracle.
    pub oracle_match_threshold: f64,
    pub link_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rollout: RolloutConfig::default(),
            filter: FilterConfig::default(),
            eval: EvalConfig::default(),
            backend: None,
            oracle_match_threshold: DEFAULT_MATCH_THRESHOLD,
            link_threshold: DEFAULT_LINK_THRESHOLD,
        }
    }
}

impl RunConfig {
    /// Reads a run config, or the `config` snapshot embedded in a run
    /// manifest. Relative script paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |e: serde_json::Error| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
        let body = match value.get("config") {
            Some(inner) if value.get("command").is_some() => inner.clone(),
            _ => value,
        };
        let mut cfg: RunConfig = serde_json::from_value(body).map_err(parse_err)?;
        if let Some(BackendConfig::Scripted { script }) = &mut cfg.backend {
            if script.is_relative() {
                if let Some(dir) = path.parent() {
                    *script = dir.join(&*script);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
