//! Run configuration, stored as TOML.
//!
//! A config file only needs the fields it changes; everything else keeps
//! its default. `key.path=value` overrides are merged the same way.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::engine::{Aggregator, EncoderConfig};
use crate::eval::{Task, OVERALL_LABELS_PER_CLASS, OVERALL_TEST, OVERALL_VAL, TAIL_LABELS_PER_CLASS};
use crate::graph::PowerlawSpec;
use crate::pagerank::SamplerOptions;
use crate::pseudo::GenConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A graph directory as read by [`crate::graph::load_graph_dir`].
    Dir {
        path: PathBuf,
        #[serde(default = "default_true")]
        l1_normalize: bool,
    },
    Synthetic(PowerlawSpec),
}

fn default_true() -> bool {
    true
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(PowerlawSpec::new(400, 3, 64, 4, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub tail_labels_per_class: usize,
    pub overall_labels_per_class: usize,
    pub overall_val: usize,
    pub overall_test: usize,
    /// Forbid edits between two validation/test nodes.
    pub protect_held_out: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            tail_labels_per_class: TAIL_LABELS_PER_CLASS,
            overall_labels_per_class: OVERALL_LABELS_PER_CLASS,
            overall_val: OVERALL_VAL,
            overall_test: OVERALL_TEST,
            protect_held_out: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seeds: Vec<u64>,
    /// Message-passing layer used by every encoder.
    pub backbone: Aggregator,
    pub enable_denoise: bool,
    pub enable_discover: bool,
    pub enable_generate: bool,
    /// Add labeled pseudo nodes to the retraining mask.
    pub train_on_pseudo_labels: bool,
    pub data: DataSource,
    pub sampler: SamplerOptions,
    pub augment: AugmentConfig,
    pub generator: GenConfig,
    pub classifier: EncoderConfig,
    pub link_predictor: EncoderConfig,
    pub split: SplitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::TailNc,
            seeds: vec![0, 1, 2, 3, 4],
            backbone: Aggregator::Gcn,
            enable_denoise: true,
            enable_discover: true,
            enable_generate: true,
            train_on_pseudo_labels: true,
            data: DataSource::default(),
            sampler: SamplerOptions::default(),
            augment: AugmentConfig::default(),
            generator: GenConfig::default(),
            classifier: EncoderConfig::label_classifier(),
            link_predictor: EncoderConfig::link_predictor(),
            split: SplitConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            // A tagged table switching variant replaces the old one wholesale.
            if o.get("kind").is_some_and(|k| b.get("kind") != Some(k)) {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` over the defaults, then applies `key.path=value`
    /// overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value = toml::Value::try_from(RunConfig::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        merge(&mut value, toml::Value::Table(user));
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let path = path.trim();
            if path.is_empty() {
                return Err(ConfigError::Override(o.clone()));
            }
            let mut patch = parse_scalar(raw.trim());
            for key in path.split('.').rev() {
                let mut t = toml::Table::new();
                t.insert(key.to_string(), patch);
                patch = toml::Value::Table(t);
            }
            merge(&mut value, patch);
        }
        value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty".into());
        }
        self.augment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.generator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, enc) in [("classifier", &self.classifier), ("link_predictor", &self.link_predictor)] {
            if enc.epochs == 0 {
                return invalid(format!("{name}.epochs must be >= 1"));
            }
            if !(0.0..1.0).contains(&enc.dropout) {
                return invalid(format!("{name}.dropout must lie in [0, 1)"));
            }
        }
        if self.backbone == Aggregator::Dense {
            return invalid("backbone must be gcn or sage-mean".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form with the seed list left out.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes to JSON");
        v.as_object_mut().expect("config is an object").remove("seeds");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn classifier_config(&self) -> EncoderConfig {
        EncoderConfig { aggregator: self.backbone, ..self.classifier.clone() }
    }

    pub fn link_config(&self) -> EncoderConfig {
        EncoderConfig { aggregator: self.backbone, ..self.link_predictor.clone() }
    }

    /// Whether the run needs pretrained embeddings at all.
    pub fn needs_embeddings(&self) -> bool {
        self.enable_denoise || self.enable_discover
    }
}
