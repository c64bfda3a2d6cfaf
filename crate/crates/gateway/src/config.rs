//! Gateway configuration file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! request_timeout_s = 30.0
//! max_in_flight = 64
//! per_tier_concurrency = 16
//!
//! [models]
//! noft = "models/noft.model"
//! adversarial = "models/adversarial.model"
//! difficulty = "models/difficulty.model"   # optional
//!
//! # Either an inline policy ...
//! [policy]
//! t1 = 4.80697
//! t2 = 20.26065
//! adversarial_threshold = 0.90
//! adversarial_action = "reject"
//! [policy.tiers.small]
//! kind = "mock"
//! latency_mean_s = 0.1
//!
//! # ... or `policy_file = "policy.json"` pointing at an `optimize` output.
//! ```
//!
//! Relative paths resolve against the config file's directory. The
//! environment variables `NOFT_LISTEN`, `NOFT_NOFT_MODEL`,
//! `NOFT_ADVERSARIAL_MODEL` and `NOFT_DIFFICULTY_MODEL` override the matching
//! keys.

use std::path::{Path, PathBuf};

use noft_core::route::{RoutingPolicy, Tier};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_timeout() -> f64 {
    30.0
}

fn default_in_flight() -> usize {
    64
}

fn default_tier_concurrency() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub noft: PathBuf,
    pub adversarial: PathBuf,
    #[serde(default)]
    pub difficulty: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_s: f64,
    /// Requests processed at once; further requests wait.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Concurrent backend calls per tier.
    #[serde(default = "default_tier_concurrency")]
    pub per_tier_concurrency: usize,
    pub models: ModelPaths,
    #[serde(default)]
    pub policy: Option<RoutingPolicy>,
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
}

impl GatewayConfig {
    /// Reads, resolves relative paths, applies env overrides and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: GatewayConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.resolve_policy_file()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.models.noft);
        fix(&mut self.models.adversarial);
        if let Some(d) = &mut self.models.difficulty {
            fix(d);
        }
        if let Some(p) = &mut self.policy_file {
            fix(p);
        }
    }

    /// Applies `NOFT_*` overrides read through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("NOFT_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("NOFT_NOFT_MODEL") {
            self.models.noft = v.into();
        }
        if let Some(v) = get("NOFT_ADVERSARIAL_MODEL") {
            self.models.adversarial = v.into();
        }
        if let Some(v) = get("NOFT_DIFFICULTY_MODEL") {
            self.models.difficulty = Some(v.into());
        }
    }

    fn resolve_policy_file(&mut self) -> Result<(), ConfigError> {
        let Some(file) = self.policy_file.clone() else {
            return Ok(());
        };
        if self.policy.is_some() {
            return Err(ConfigError::Invalid("set either [policy] or policy_file, not both".into()));
        }
        let text = std::fs::read_to_string(&file).map_err(|source| ConfigError::Io {
            path: file.display().to_string(),
            source,
        })?;
        self.policy = Some(serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: file.display().to_string(),
            message: e.to_string(),
        })?);
        Ok(())
    }

    pub fn policy(&self) -> Result<&RoutingPolicy, ConfigError> {
        self.policy
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("no routing policy: add [policy] or policy_file".into()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let policy = self.policy()?;
        policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for t in Tier::ALL {
            if !policy.tiers.contains_key(&t) {
                return Err(ConfigError::Invalid(format!("policy has no backend for tier {t}")));
            }
        }
        if !(self.request_timeout_s > 0.0 && self.request_timeout_s.is_finite()) {
            return Err(ConfigError::Invalid(format!("request_timeout_s {}", self.request_timeout_s)));
        }
        if self.max_in_flight == 0 || self.per_tier_concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency limits must be at least 1".into()));
        }
        Ok(())
    }
}
