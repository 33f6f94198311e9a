//! Settings: built-in defaults, then a TOML or JSON file, then `DDUP_`
//! environment variables, then command-line flags.
//!
//! An environment variable names a key path with `__` between levels, so
//! `DDUP_INDEX__NLIST=64` sets `index.nlist` and `DDUP_STORE=x.snap` sets
//! `store`. Values are read as JSON when they parse and as strings
//! otherwise. `DDUP_SETTINGS` names the settings file itself.

use std::path::{Path, PathBuf};

use ddup_core::Metric;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{IndexParams, DEFAULT_THRESHOLD, DEFAULT_TOP_N};
use crate::error::ServiceError;

pub const ENV_PREFIX: &str = "DDUP_";
pub const SETTINGS_ENV: &str = "DDUP_SETTINGS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSettings {
    pub nlist: Option<usize>,
    pub metric: String,
    pub seed: u64,
    pub nprobe: Option<usize>,
}

impl Default for IndexSettings {
    fn default() -> Self {
        Self {
            nlist: None,
            metric: Metric::Cosine.to_string(),
            seed: 0,
            nprobe: None,
        }
    }
}

impl IndexSettings {
    pub fn to_params(&self) -> Result<IndexParams, ServiceError> {
        Ok(IndexParams {
            nlist: self.nlist,
            metric: self.metric.parse().map_err(ServiceError::InvalidRequest)?,
            seed: self.seed,
            nprobe: self.nprobe,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupeSettings {
    pub top_n: usize,
    pub threshold: f64,
    pub nprobe: Option<usize>,
}

impl Default for DedupeSettings {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            threshold: DEFAULT_THRESHOLD,
            nprobe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSettings {
    pub host: String,
    pub port: u16,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".to_string(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Working snapshot that commands read and update.
    pub store: PathBuf,
    /// Stored vector width for a new store.
    pub dim: usize,
    pub index: IndexSettings,
    pub dedupe: DedupeSettings,
    pub server: ServerSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store: PathBuf::from("ddup.snap"),
            dim: ddup_core::vector::REDUCED_DIM,
            index: IndexSettings::default(),
            dedupe: DedupeSettings::default(),
            server: ServerSettings::default(),
        }
    }
}

/// Parses a TOML or JSON document, chosen by extension (`.json` is JSON,
/// anything else TOML).
pub fn read_document(path: &Path) -> Result<Value, ServiceError> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let bad = |e: String| ServiceError::invalid(format!("{}: {e}", path.display()));
    if is_json {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    } else {
        let doc: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(doc).map_err(|e| bad(e.to_string()))
    }
}

/// Deep merge; objects merge key by key, everything else is replaced.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `DDUP_` variables from `vars` onto `doc`.
pub fn apply_env(doc: &mut Value, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ServiceError> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != SETTINGS_ENV)
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|p| p.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ServiceError::invalid(format!("malformed setting variable {key}")));
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut over = value;
        for part in path.iter().rev() {
            let mut m = serde_json::Map::new();
            m.insert(part.clone(), over);
            over = Value::Object(m);
        }
        merge(doc, over);
    }
    Ok(())
}

impl Config {
    /// Defaults, overlaid by `file` and then by the `DDUP_` entries of
    /// `env`. Unknown keys are errors.
    pub fn resolve(file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ServiceError> {
        let mut doc = serde_json::to_value(Config::default()).expect("defaults serialize");
        if let Some(path) = file {
            merge(&mut doc, read_document(path)?);
        }
        apply_env(&mut doc, env)?;
        let config: Config = serde_json::from_value(doc).map_err(|e| ServiceError::invalid(format!("settings: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// [`Config::resolve`] against the process environment.
    pub fn from_env(file: Option<&Path>) -> Result<Self, ServiceError> {
        let from_var = std::env::var_os(SETTINGS_ENV).map(PathBuf::from);
        let file = file.map(Path::to_path_buf).or(from_var);
        Self::resolve(file.as_deref(), std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.dim == 0 {
            return Err(ServiceError::invalid("dim must be positive"));
        }
        self.index.to_params()?;
        if !(self.dedupe.threshold > 0.0 && self.dedupe.threshold < 1.0) {
            return Err(ServiceError::invalid("dedupe.threshold must lie in (0, 1)"));
        }
        if self.dedupe.top_n == 0 {
            return Err(ServiceError::invalid("dedupe.top_n must be positive"));
        }
        Ok(())
    }
}
