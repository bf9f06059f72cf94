//! Experiment configuration: JSON file, defaults, dotted overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::AdapterConfig;
use crate::memory::{Condition, Representation};
use crate::retrieval::Bm25Params;
use crate::world::{BaselineThresholds, EpisodeParams, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distiller {
    Rule,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: World,
    pub condition: Condition,
    pub representation: Representation,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
    pub runs: u32,
    /// Retrieval depth; `None` uses the condition default (1 agg, 3 ind/step).
    pub top_k: Option<usize>,
    pub bm25: Bm25Params,
    pub step_interval: u32,
    pub window: usize,
    pub overlap_threshold: f64,
    pub max_steps: u32,
    /// Evaluation checkpoints per training phase, evenly spaced, last at the end.
    pub milestones: u32,
    /// Evaluations never write to the pool; only `false` is supported.
    pub eval_write: bool,
    pub thresholds: BaselineThresholds,
    pub distiller: Distiller,
    pub llm: Option<AdapterConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: World::Cleanplace,
            condition: Condition::Agg,
            representation: Representation::Insight,
            train_n: 200,
            test_n: 100,
            seed: 42,
            runs: 2,
            top_k: None,
            bm25: Bm25Params::default(),
            step_interval: 4,
            window: 4,
            overlap_threshold: 0.5,
            max_steps: 30,
            milestones: 1,
            eval_write: false,
            thresholds: BaselineThresholds::default(),
            distiller: Distiller::Rule,
            llm: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn top_k(&self) -> usize {
        self.top_k.unwrap_or_else(|| self.condition.default_top_k())
    }

    pub fn episode_params(&self) -> EpisodeParams {
        EpisodeParams {
            top_k: self.top_k(),
            bm25: self.bm25,
            step_interval: self.step_interval,
            window: self.window,
            overlap_threshold: self.overlap_threshold,
            max_steps: self.max_steps,
            thresholds: self.thresholds,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("train_n", self.train_n as u64),
            ("test_n", self.test_n as u64),
            ("runs", u64::from(self.runs)),
            ("step_interval", u64::from(self.step_interval)),
            ("window", self.window as u64),
            ("max_steps", u64::from(self.max_steps)),
            ("milestones", u64::from(self.milestones)),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.top_k == Some(0) {
            return Err(invalid("top_k", "must be at least 1"));
        }
        if self.milestones as usize > self.train_n {
            return Err(invalid("milestones", "cannot exceed train_n"));
        }
        if !(self.bm25.k1 > 0.0 && self.bm25.k1.is_finite()) {
            return Err(invalid("bm25.k1", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bm25.b) {
            return Err(invalid("bm25.b", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(invalid("overlap_threshold", "must lie in [0, 1]"));
        }
        for (field, v) in [
            ("thresholds.cleanplace_a", self.thresholds.cleanplace_a),
            ("thresholds.cleanplace_b", self.thresholds.cleanplace_b),
            ("thresholds.gridfind_a", self.thresholds.gridfind_a),
            ("thresholds.gridfind_b", self.thresholds.gridfind_b),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, "must lie in [0, 1]"));
            }
        }
        if self.eval_write {
            return Err(invalid(
                "eval_write",
                "evaluation is read-only; only false is supported",
            ));
        }
        if self.distiller == Distiller::Llm && self.llm.is_none() {
            return Err(invalid("llm", "required when distiller is \"llm\""));
        }
        Ok(())
    }

    /// Canonical JSON: fixed field order, no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Overlays `patch` onto `base`, refusing keys absent from `base`. Keys whose
/// base value is `null` (optional sections) accept any value.
fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<(), ConfigError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &sub)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(ConfigError::UnknownKey(sub)),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), patch);
        patch = Value::Object(m);
    }
    merge(tree, &patch, "")
}

/// Builds a config from a JSON object text plus `key=value` overrides
/// (dotted keys for nested fields, values parsed as JSON when possible).
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let file: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if !file.is_object() {
        return Err(ConfigError::Parse("config must be a JSON object".into()));
    }
    let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    merge(&mut tree, &file, "")?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let config: RunConfig =
        serde_json::from_value(tree).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, overrides)
}
