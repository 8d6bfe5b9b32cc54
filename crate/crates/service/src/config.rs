//! Service configuration file.
//!
//! ```json
//! {
//!   "graph_dir": "graphs",
//!   "thresholds": "thresholds.json",
//!   "dosage_rules": "dosage_rules.json",
//!   "staleness_ms": 300000,
//!   "clear_margin": 0.1,
//!   "debounce_ms": 60000,
//!   "http_port": 8080,
//!   "device_port": 7070
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use vitalnav_core::alarm::{parse_threshold_table, DEFAULT_DEBOUNCE_MS};
use vitalnav_core::dosage::DosageRuleSet;
use vitalnav_core::graph::load_corpus;
use vitalnav_core::navigator::ClearMargin;
use vitalnav_core::store::{StalenessPolicy, DEFAULT_STALENESS_MS};
use vitalnav_core::{Engine, EngineConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{field} must be {expected}")]
    Invalid { field: &'static str, expected: &'static str },
    #[error("graph directory {path}: {message}")]
    Graphs { path: PathBuf, message: String },
    #[error("threshold table {path}: {message}")]
    Thresholds { path: PathBuf, message: String },
    #[error("dosage rules {path}: {message}")]
    DosageRules { path: PathBuf, message: String },
}

fn default_bind() -> IpAddr {
    IpAddr::V4(Ipv4Addr::LOCALHOST)
}

fn default_staleness() -> u64 {
    DEFAULT_STALENESS_MS
}

fn default_margin() -> f64 {
    ClearMargin::default().relative
}

fn default_debounce() -> u64 {
    DEFAULT_DEBOUNCE_MS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub graph_dir: PathBuf,
    #[serde(default)]
    pub thresholds: Option<PathBuf>,
    #[serde(default)]
    pub dosage_rules: Option<PathBuf>,
    #[serde(default = "default_staleness")]
    pub staleness_ms: u64,
    #[serde(default = "default_margin")]
    pub clear_margin: f64,
    #[serde(default = "default_debounce")]
    pub debounce_ms: u64,
    #[serde(default = "default_bind")]
    pub bind: IpAddr,
    pub http_port: u16,
    pub device_port: u16,
}

impl ServiceConfig {
    /// Config with defaults for everything but the graph directory. Ports are
    /// 0, so the OS picks free ones.
    pub fn with_graph_dir(graph_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            graph_dir: graph_dir.into(),
            thresholds: None,
            dosage_rules: None,
            staleness_ms: DEFAULT_STALENESS_MS,
            clear_margin: default_margin(),
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            bind: default_bind(),
            http_port: 0,
            device_port: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_owned(), message: e.to_string() })?;
        let mut config = Self::parse(&text)
            .map_err(|e| ConfigError::Syntax { path: path.to_owned(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_relative_to(base);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.graph_dir);
        self.thresholds.as_mut().map(join);
        self.dosage_rules.as_mut().map(join);
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        if !(self.clear_margin.is_finite() && self.clear_margin >= 0.0) {
            return Err(ConfigError::Invalid { field: "clear_margin", expected: "a non-negative number" });
        }
        let thresholds = match &self.thresholds {
            Some(path) => {
                let text = read(path, |message| ConfigError::Thresholds { path: path.clone(), message })?;
                parse_threshold_table(&text)
                    .map_err(|e| ConfigError::Thresholds { path: path.clone(), message: e.to_string() })?
            }
            None => Vec::new(),
        };
        let rules = match &self.dosage_rules {
            Some(path) => {
                let text = read(path, |message| ConfigError::DosageRules { path: path.clone(), message })?;
                DosageRuleSet::parse(&text)
                    .map_err(|e| ConfigError::DosageRules { path: path.clone(), message: e.to_string() })?
            }
            None => DosageRuleSet::default(),
        };
        Ok(EngineConfig {
            staleness: StalenessPolicy::with_default(self.staleness_ms),
            clear_margin: ClearMargin::relative(self.clear_margin),
            debounce_ms: self.debounce_ms,
            thresholds,
            rules: Arc::new(rules),
        })
    }

    /// Loads every graph in `graph_dir` and builds an engine around them.
    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let config = self.engine_config()?;
        let graphs = load_corpus(&self.graph_dir)
            .map_err(|e| ConfigError::Graphs { path: self.graph_dir.clone(), message: e.to_string() })?;
        Ok(Engine::new(config, graphs))
    }
}

fn read(path: &Path, err: impl FnOnce(String) -> ConfigError) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| err(e.to_string()))
}
