//! Flat `key = value` configuration with section prefixes.
//!
//! ```text
//! # comment
//! [tracker]
//! match_iou_thresh = 0.45
//! calibration.meters_per_pixel = 0.05   # dotted keys work anywhere
//!
//! [categories]
//! suv = car
//! ```
//!
//! Every key is stored fully qualified (`tracker.match_iou_thresh`). Keys
//! under a section header are prefixed with it; a key that already contains
//! a dot is taken as-is only at top level.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::classmap::{CategoryMap, UnmappedPolicy};
use crate::emission::{Calibration, CategoryDefaults, EmissionFactorTable};
use crate::plate::{ConsensusConfig, PlateFormat};
use crate::registry::RegistryConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config key `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: "unterminated section header".into() })?
                    .trim();
                if name.is_empty() {
                    return Err(ConfigError::Syntax { line: i + 1, message: "empty section name".into() });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: format!("expected key = value, got `{line}`") })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, message: "empty key".into() });
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            entries.insert(full, unquote(value.trim()).to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError::Value { key: key.to_string(), message: format!("`{v}`: {e}") }))
            .transpose()
    }

    /// (suffix, value) for every key under `prefix.`.
    pub fn section(&self, prefix: &str) -> impl Iterator<Item = (&str, &str)> {
        let p = format!("{prefix}.");
        self.entries.iter().filter_map(move |(k, v)| k.strip_prefix(&p).map(|s| (s, v.as_str())))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn unquote(v: &str) -> &str {
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Everything the `estimate` pipeline needs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub categories: CategoryMap,
    pub consensus: ConsensusConfig,
    /// `None` disables registry lookups.
    pub registry: Option<RegistryConfig>,
    pub max_in_flight: usize,
    pub table: EmissionFactorTable,
    pub category_defaults: CategoryDefaults,
    pub calibration: Calibration,
    pub window_s: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            categories: CategoryMap::default(),
            consensus: ConsensusConfig::default(),
            registry: None,
            max_in_flight: 8,
            table: EmissionFactorTable::default(),
            category_defaults: CategoryDefaults::default(),
            calibration: Calibration::default(),
            window_s: None,
        }
    }
}

const SCALAR_KEYS: &[&str] = &[
    "tracker.det_conf_floor",
    "tracker.high_score_thresh",
    "tracker.match_iou_thresh",
    "tracker.low_match_iou_thresh",
    "tracker.track_buffer_frames",
    "tracker.min_hits_to_activate",
    "tracker.std_weight_position",
    "tracker.std_weight_velocity",
    "classmap.strict",
    "classmap.default",
    "plate.min_support",
    "plate.pattern",
    "registry.base_url",
    "registry.timeout_ms",
    "registry.max_retries",
    "registry.cache_capacity",
    "registry.cache_ttl_s",
    "registry.backoff_base_ms",
    "registry.max_in_flight",
    "emission.fallback_factor",
    "calibration.meters_per_pixel",
    "calibration.fallback_speed_kmh",
    "report.window_s",
];

/// Sections whose keys are free-form.
const OPEN_SECTIONS: &[&str] = &["categories", "emission_factors", "category_defaults", "scenario", "vehicle"];

impl PipelineConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, ConfigError> {
        for key in map.keys() {
            let known = SCALAR_KEYS.contains(&key) || OPEN_SECTIONS.iter().any(|s| key.starts_with(&format!("{s}.")));
            if !known {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }
        let mut cfg = Self::default();
        let t = &mut cfg.tracker;
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = map.get_parsed($key)? {
                    $field = v;
                }
            };
        }
        set!(t.det_conf_floor, "tracker.det_conf_floor");
        set!(t.high_score_thresh, "tracker.high_score_thresh");
        set!(t.match_iou_thresh, "tracker.match_iou_thresh");
        set!(t.low_match_iou_thresh, "tracker.low_match_iou_thresh");
        set!(t.track_buffer_frames, "tracker.track_buffer_frames");
        set!(t.min_hits_to_activate, "tracker.min_hits_to_activate");
        set!(t.kalman.std_weight_position, "tracker.std_weight_position");
        set!(t.kalman.std_weight_velocity, "tracker.std_weight_velocity");
        t.validate().map_err(|e| ConfigError::Value { key: "tracker".into(), message: e.to_string() })?;

        for (raw, category) in map.section("categories") {
            cfg.categories.insert(raw, category);
        }
        if let Some(d) = map.get("classmap.default") {
            cfg.categories.set_unmapped(UnmappedPolicy::Default(d.trim().to_lowercase()));
        }
        if map.get_parsed::<bool>("classmap.strict")? == Some(true) {
            cfg.categories.set_unmapped(UnmappedPolicy::Reject);
        }

        set!(cfg.consensus.min_support, "plate.min_support");
        if let Some(p) = map.get("plate.pattern") {
            cfg.consensus.format = PlateFormat::new(p);
        }

        let registry_keys = map.keys().any(|k| k.starts_with("registry.") && k != "registry.max_in_flight");
        if registry_keys {
            let mut r = RegistryConfig::default();
            set!(r.base_url, "registry.base_url");
            set!(r.timeout_ms, "registry.timeout_ms");
            set!(r.max_retries, "registry.max_retries");
            set!(r.cache_capacity, "registry.cache_capacity");
            set!(r.cache_ttl_s, "registry.cache_ttl_s");
            set!(r.backoff_base_ms, "registry.backoff_base_ms");
            r.validate().map_err(|e| ConfigError::Value { key: "registry".into(), message: e.to_string() })?;
            cfg.registry = Some(r);
        }
        set!(cfg.max_in_flight, "registry.max_in_flight");
        if cfg.max_in_flight == 0 {
            return Err(ConfigError::Value { key: "registry.max_in_flight".into(), message: "must be positive".into() });
        }

        for (key, value) in map.section("emission_factors") {
            let (class, fuel) = key.split_once('/').ok_or_else(|| ConfigError::Value {
                key: format!("emission_factors.{key}"),
                message: "expected `Class/Fuel = grams_per_km`".into(),
            })?;
            let g: f64 = value.parse().map_err(|e| ConfigError::Value { key: format!("emission_factors.{key}"), message: format!("{e}") })?;
            cfg.table.set(class, fuel, g).map_err(|e| ConfigError::Value { key: format!("emission_factors.{key}"), message: e.to_string() })?;
        }
        for (category, value) in map.section("category_defaults") {
            let g: f64 = value
                .parse()
                .map_err(|e| ConfigError::Value { key: format!("category_defaults.{category}"), message: format!("{e}") })?;
            if !(g >= 0.0) {
                return Err(ConfigError::Value { key: format!("category_defaults.{category}"), message: "must be ≥ 0".into() });
            }
            cfg.category_defaults.by_category.insert(category.to_lowercase(), g);
        }
        set!(cfg.category_defaults.fallback, "emission.fallback_factor");

        set!(cfg.calibration.meters_per_pixel, "calibration.meters_per_pixel");
        set!(cfg.calibration.fallback_speed_kmh, "calibration.fallback_speed_kmh");
        cfg.calibration.validate().map_err(|e| ConfigError::Value { key: "calibration".into(), message: e.to_string() })?;

        if let Some(w) = map.get_parsed::<f64>("report.window_s")? {
            if !(w > 0.0) {
                return Err(ConfigError::Value { key: "report.window_s".into(), message: "must be > 0".into() });
            }
            cfg.window_s = Some(w);
        }
        Ok(cfg)
    }
}
