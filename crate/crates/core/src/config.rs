//! Pipeline configuration.
//!
//! Settings come from a flat TOML document, then environment variables,
//! then explicit overrides (command-line flags), each layer replacing the
//! previous one. Relative paths read from the file are resolved against the
//! file's directory; all other relative paths against the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::classifier::Hyperparams;
use crate::corpus::DEFAULT_PAGE_PATTERN;
use crate::embedding::DEFAULT_DIM;
use crate::geo::{GeoPoint, DEFAULT_BUCKET_KM, DEFAULT_MAP_WIDTH, SWEDEN_CENTER};
use crate::http_cache::CacheMode;
use crate::linker::DEFAULT_CANDIDATE_LIMIT;
use crate::wikidata::WikidataConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: {message}")]
    Invalid { key: String, message: String },
}

/// Every recognized key. Each can also be set through the environment as
/// `GAZETTEER_<KEY>` in upper case.
pub const KEYS: &[&str] = &[
    "raw_dir",
    "page_pattern",
    "dataset",
    "model",
    "annotations",
    "embed_provider",
    "embed_url",
    "embed_dim",
    "embed_cache",
    "wd_api_url",
    "sparql_url",
    "user_agent",
    "language",
    "cache_mode",
    "cache_dir",
    "min_interval_ms",
    "timeout_secs",
    "concurrency",
    "candidate_limit",
    "min_sim",
    "learning_rate",
    "l2_lambda",
    "epochs",
    "ref_lat",
    "ref_lon",
    "bucket_km",
    "svg_width",
    "geojson",
    "histogram",
    "svg",
];

const PATH_KEYS: &[&str] = &["raw_dir", "dataset", "model", "annotations", "embed_cache", "cache_dir", "geojson", "histogram", "svg"];

/// Environment variables with a name of their own.
const ENV_ALIASES: &[(&str, &str)] = &[("EMBED_URL", "embed_url"), ("WD_CACHE_MODE", "cache_mode")];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Local,
    Remote,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(ProviderKind::Local),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("expected local or remote, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub raw_dir: PathBuf,
    pub page_pattern: String,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub annotations: PathBuf,
    pub embed_provider: ProviderKind,
    pub embed_url: Option<String>,
    pub embed_dim: usize,
    pub embed_cache: Option<PathBuf>,
    pub wikidata: WikidataConfig,
    pub cache_mode: CacheMode,
    pub cache_dir: PathBuf,
    pub min_interval_ms: u64,
    pub timeout_secs: u64,
    pub concurrency: usize,
    pub candidate_limit: usize,
    pub min_sim: f64,
    pub hyperparams: Hyperparams,
    pub reference: GeoPoint,
    pub bucket_km: f64,
    pub svg_width: u32,
    pub geojson: PathBuf,
    pub histogram: PathBuf,
    pub svg: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            raw_dir: "raw".into(),
            page_pattern: DEFAULT_PAGE_PATTERN.into(),
            dataset: "dataset.jsonl".into(),
            model: "model.json".into(),
            annotations: "annotations.jsonl".into(),
            embed_provider: ProviderKind::Local,
            embed_url: None,
            embed_dim: DEFAULT_DIM,
            embed_cache: None,
            wikidata: WikidataConfig::default(),
            cache_mode: CacheMode::Record,
            cache_dir: "wd-cache".into(),
            min_interval_ms: 100,
            timeout_secs: 30,
            concurrency: 4,
            candidate_limit: DEFAULT_CANDIDATE_LIMIT,
            min_sim: -1.0,
            hyperparams: Hyperparams::default(),
            reference: SWEDEN_CENTER,
            bucket_km: DEFAULT_BUCKET_KM,
            svg_width: DEFAULT_MAP_WIDTH,
            geojson: "gazetteer.geojson".into(),
            histogram: "distance_histogram.csv".into(),
            svg: "map.svg".into(),
        }
    }
}

/// Layered key-value settings prior to validation.
#[derive(Debug, Clone, Default)]
pub struct ConfigLayers {
    values: BTreeMap<String, (String, Option<PathBuf>)>,
}

impl ConfigLayers {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_key(key: &str) -> Result<(), ConfigError> {
        if KEYS.contains(&key) {
            Ok(())
        } else {
            Err(ConfigError::UnknownKey(key.to_string()))
        }
    }

    /// Reads a flat TOML document. Nested tables and arrays are rejected.
    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let file_err = |message: String| ConfigError::File { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| file_err(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (key, value) in table {
            Self::check_key(&key)?;
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(ConfigError::Invalid { key, message: format!("expected a scalar, got {}", other.type_str()) })
                }
            };
            self.values.insert(key, (text, Some(base.clone())));
        }
        Ok(())
    }

    /// Applies `GAZETTEER_<KEY>` variables plus `EMBED_URL` and `WD_CACHE_MODE`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) {
        for (name, value) in vars {
            let key = if let Some(rest) = name.strip_prefix("GAZETTEER_") {
                rest.to_ascii_lowercase()
            } else if let Some((_, key)) = ENV_ALIASES.iter().find(|(alias, _)| *alias == name) {
                (*key).to_string()
            } else {
                continue;
            };
            if KEYS.contains(&key.as_str()) {
                self.values.insert(key, (value, None));
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        Self::check_key(key)?;
        self.values.insert(key.to_string(), (value.into(), None));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn build(&self) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (key, (value, base)) in &self.values {
            let invalid = |message: String| ConfigError::Invalid { key: key.clone(), message };
            let path = || -> PathBuf {
                let p = PathBuf::from(value);
                match base {
                    Some(base) if p.is_relative() => base.join(p),
                    _ => p,
                }
            };
            fn num<T: FromStr>(value: &str) -> Result<T, String>
            where
                T::Err: std::fmt::Display,
            {
                value.trim().parse::<T>().map_err(|e| format!("{value:?}: {e}"))
            }
            if PATH_KEYS.contains(&key.as_str()) && value.trim().is_empty() {
                return Err(invalid("empty path".into()));
            }
            match key.as_str() {
                "raw_dir" => cfg.raw_dir = path(),
                "page_pattern" => cfg.page_pattern = value.clone(),
                "dataset" => cfg.dataset = path(),
                "model" => cfg.model = path(),
                "annotations" => cfg.annotations = path(),
                "embed_provider" => cfg.embed_provider = value.parse().map_err(invalid)?,
                "embed_url" => cfg.embed_url = Some(value.clone()).filter(|v| !v.is_empty()),
                "embed_dim" => cfg.embed_dim = num(value).map_err(invalid)?,
                "embed_cache" => cfg.embed_cache = Some(path()),
                "wd_api_url" => cfg.wikidata.api_url = value.clone(),
                "sparql_url" => cfg.wikidata.sparql_url = value.clone(),
                "user_agent" => cfg.wikidata.user_agent = value.clone(),
                "language" => cfg.wikidata.language = value.clone(),
                "cache_mode" => cfg.cache_mode = value.parse().map_err(invalid)?,
                "cache_dir" => cfg.cache_dir = path(),
                "min_interval_ms" => cfg.min_interval_ms = num(value).map_err(invalid)?,
                "timeout_secs" => cfg.timeout_secs = num(value).map_err(invalid)?,
                "concurrency" => cfg.concurrency = num(value).map_err(invalid)?,
                "candidate_limit" => cfg.candidate_limit = num(value).map_err(invalid)?,
                "min_sim" => cfg.min_sim = num(value).map_err(invalid)?,
                "learning_rate" => cfg.hyperparams.learning_rate = num(value).map_err(invalid)?,
                "l2_lambda" => cfg.hyperparams.l2_lambda = num(value).map_err(invalid)?,
                "epochs" => cfg.hyperparams.epochs = num(value).map_err(invalid)?,
                "ref_lat" | "ref_lon" | "bucket_km" | "svg_width" | "geojson" | "histogram" | "svg" => {}
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        cfg.bucket_km = self.parse_or("bucket_km", cfg.bucket_km)?;
        cfg.svg_width = self.parse_or("svg_width", cfg.svg_width)?;
        let lat = self.parse_or("ref_lat", cfg.reference.lat())?;
        let lon = self.parse_or("ref_lon", cfg.reference.lon())?;
        cfg.reference = GeoPoint::new(lat, lon)
            .map_err(|e| ConfigError::Invalid { key: "ref_lat/ref_lon".into(), message: e.to_string() })?;
        for (key, slot) in [("geojson", &mut cfg.geojson), ("histogram", &mut cfg.histogram), ("svg", &mut cfg.svg)] {
            if let Some((value, base)) = self.values.get(key) {
                let p = PathBuf::from(value);
                *slot = match base {
                    Some(base) if p.is_relative() => base.join(p),
                    _ => p,
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|e: T::Err| ConfigError::Invalid { key: key.into(), message: format!("{v:?}: {e}") }),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: &str| Err(ConfigError::Invalid { key: key.into(), message: message.into() });
        if self.embed_dim == 0 {
            return invalid("embed_dim", "must be positive");
        }
        if self.embed_provider == ProviderKind::Remote && self.embed_url.is_none() {
            return invalid("embed_url", "required for the remote provider");
        }
        if self.concurrency == 0 {
            return invalid("concurrency", "must be positive");
        }
        if !(1..=crate::wikidata::MAX_SEARCH_LIMIT).contains(&self.candidate_limit) {
            return invalid("candidate_limit", "must be between 1 and 50");
        }
        let bucket_ok = self.bucket_km > 0.0 && self.bucket_km.is_finite();
        if !bucket_ok {
            return invalid("bucket_km", "must be positive");
        }
        if self.svg_width == 0 {
            return invalid("svg_width", "must be positive");
        }
        let usable = self.hyperparams.learning_rate > 0.0 && self.hyperparams.l2_lambda >= 0.0;
        if !usable {
            return invalid("learning_rate/l2_lambda", "learning rate must be positive, lambda non-negative");
        }
        if !self.min_sim.is_finite() {
            return invalid("min_sim", "must be finite");
        }
        Ok(())
    }
}
