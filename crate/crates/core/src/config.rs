//! One TOML file holding every tunable default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::SessionConfig;
use crate::bench::MultiMode;
use crate::exec::RunConfig;
use crate::llm::{HttpBackendConfig, RetryPolicy};
use crate::potentials::{SimilarityWeights, DEFAULT_TOP_K};
use crate::reward::RewardConfig;
use crate::script::ExtensionTable;
use crate::thermo::ToleranceConfig;

/// Points at the config file when `--config` is not given.
pub const CONFIG_ENV: &str = "MDFORGE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    #[serde(flatten)]
    pub http: HttpBackendConfig,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Write every request and response (auth redacted) to the session's
    /// `llm.jsonl`.
    pub log_requests: bool,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            http: HttpBackendConfig::default(),
            temperature: 0.7,
            max_tokens: 4096,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            log_requests: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    /// Off means dims 2-6 are left unjudged (counted as met).
    pub enabled: bool,
    /// A separate endpoint for the judge; the main backend when absent.
    pub backend: Option<HttpBackendConfig>,
}

impl Default for JudgeSection {
    fn default() -> Self {
        Self { enabled: true, backend: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrySection {
    pub potentials_dir: PathBuf,
    pub top_k: usize,
    pub similarity: SimilarityWeights,
    /// Extra suffix → pair style family entries on top of the built-in table.
    pub extensions: BTreeMap<String, String>,
    /// Base URLs tried in order when a potential is missing; empty disables
    /// fetching.
    pub fetch_endpoints: Vec<String>,
    pub fetch_timeout_s: f64,
}

impl Default for RegistrySection {
    fn default() -> Self {
        Self {
            potentials_dir: PathBuf::from("potentials"),
            top_k: DEFAULT_TOP_K,
            similarity: SimilarityWeights::default(),
            extensions: BTreeMap::new(),
            fetch_endpoints: Vec::new(),
            fetch_timeout_s: 30.0,
        }
    }
}

impl RegistrySection {
    pub fn extension_table(&self) -> ExtensionTable {
        let mut table = ExtensionTable::default();
        for (suffix, family) in &self.extensions {
            table.insert(suffix.clone(), family.clone());
        }
        table
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    /// Command keyword list; the bundled list when absent.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub listen: String,
    pub cors_origins: Vec<String>,
    /// Sessions are forgotten (and answer 410) this long after finishing.
    pub session_ttl_s: u64,
    /// Maximum concurrently running sessions.
    pub max_sessions: usize,
    /// When set, every request must carry this header with the value of
    /// `token_env`.
    pub token_header: Option<String>,
    pub token_env: Option<String>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8787".into(),
            cors_origins: Vec::new(),
            session_ttl_s: 3600,
            max_sessions: 4,
            token_header: None,
            token_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repeats: usize,
    pub k: usize,
    pub multi_mode: MultiMode,
    pub parallelism: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { repeats: 3, k: 3, multi_mode: MultiMode::Jaccard, parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Trajectory pool (JSON lines).
    pub pool_path: PathBuf,
    pub runner: RunConfig,
    pub backend: BackendSection,
    pub judge: JudgeSection,
    pub registry: RegistrySection,
    pub catalog: CatalogSection,
    pub reward: RewardConfig,
    pub tolerance: ToleranceConfig,
    pub session: SessionConfig,
    pub service: ServiceSection,
    pub bench: BenchSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pool_path: PathBuf::from("mdforge-pool.jsonl"),
            runner: RunConfig::default(),
            backend: BackendSection::default(),
            judge: JudgeSection::default(),
            registry: RegistrySection::default(),
            catalog: CatalogSection::default(),
            reward: RewardConfig::default(),
            tolerance: ToleranceConfig::default(),
            session: SessionConfig::default(),
            service: ServiceSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// `explicit`, else `$MDFORGE_CONFIG`, else built-in defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(p) = explicit {
            return Self::from_file(p);
        }
        match std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
            Some(p) => Self::from_file(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.runner.validate().map_err(|e| invalid(e.to_string()))?;
        self.reward.validate().map_err(|e| invalid(e.to_string()))?;
        self.session.validate(&self.reward).map_err(|e| invalid(e.to_string()))?;
        if self.registry.top_k == 0 {
            return Err(invalid("registry.top_k must be at least 1".into()));
        }
        if self.bench.repeats == 0 || self.bench.k == 0 {
            return Err(invalid("bench.repeats and bench.k must be at least 1".into()));
        }
        if self.service.listen.parse::<std::net::SocketAddr>().is_err() {
            return Err(invalid(format!("service.listen {:?} is not host:port", self.service.listen)));
        }
        if self.service.token_header.is_some() != self.service.token_env.is_some() {
            return Err(invalid("service.token_header and service.token_env go together".into()));
        }
        Ok(())
    }

    /// Relative paths in a config file are taken relative to that file.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.pool_path);
        fix(&mut self.registry.potentials_dir);
        fix(&mut self.runner.workdir_root);
        if let Some(p) = self.catalog.path.as_mut() {
            fix(p);
        }
    }
}
