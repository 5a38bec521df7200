use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{DatasetConfig, FramingConfig, PoseSamplerConfig};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTrainConfig, SamplerConfig};
use crate::metrics::MetricConfig;
use crate::pipeline::GenerationConfig;
use crate::vae::{VaeConfig, VaeTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Number of library shapes to render.
    pub shapes: usize,
    #[serde(flatten)]
    pub config: DatasetConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            shapes: 4,
            config: DatasetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSection {
    pub resolution: usize,
    pub framing: FramingConfig,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        GenerateSection {
            resolution: g.resolution,
            framing: g.framing,
        }
    }
}

/// Every tunable of every subcommand. Files and `--set` address fields by
/// flat dotted keys such as `vae_train.steps`. Component seeds are derived
/// from the top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub vae: VaeConfig,
    pub vae_train: VaeTrainConfig,
    pub poses: PoseSamplerConfig,
    pub flow: FlowConfig,
    pub flow_train: FlowTrainConfig,
    pub sampler: SamplerConfig,
    pub generate: GenerateSection,
    pub metrics: MetricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetSection::default(),
            vae: VaeConfig::desk(),
            vae_train: VaeTrainConfig::default(),
            poses: PoseSamplerConfig::default(),
            flow: FlowConfig::desk(),
            flow_train: FlowTrainConfig {
                steps: 10_000,
                optim: crate::nn::OptimConfig {
                    lr: 1e-3,
                    warmup_steps: 100,
                    total_steps: 10_000,
                    ..Default::default()
                },
                ..FlowTrainConfig::default()
            },
            sampler: SamplerConfig::default(),
            generate: GenerateSection::default(),
            metrics: MetricConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            framing: self.generate.framing,
            resolution: self.generate.resolution,
            sampler: self.sampler.clone(),
            resample_seed: self.seed,
        }
    }

    /// Copies the top-level seed into every component seed.
    pub fn propagate_seed(&mut self) {
        self.sampler.seed = self.seed;
        self.flow_train.seed = self.seed;
        self.metrics.seed = self.seed;
    }

    /// Flat `key → value` view, sorted by key.
    pub fn flatten(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten_into(&serde_json::to_value(self).expect("config serializes"), "", &mut out);
        out
    }

    /// Applies overrides in order; unknown keys, wrong types and invalid
    /// values are reported under the offending key.
    pub fn with_overrides<'a>(mut self, overrides: impl IntoIterator<Item = (&'a str, Value)>) -> Result<Self> {
        let known = RunConfig::default().flatten();
        for (key, value) in overrides {
            let Some(default) = known.get(key) else {
                return Err(config_error(key, "unknown key"));
            };
            if !same_kind(default, &value) {
                return Err(config_error(key, format!("expected {}, got {value}", kind_name(default))));
            }
            let mut flat = self.flatten();
            flat.insert(key.to_string(), value);
            self = serde_json::from_value(unflatten(&flat)).map_err(|e| config_error(key, e.to_string()))?;
        }
        Ok(self)
    }

    /// Validates every section, naming keys by their full dotted path.
    pub fn validate(&self) -> Result<()> {
        let known = self.flatten();
        let qualify = |prefix: &str, r: Result<()>| match r {
            Err(Error::Config { key, message }) if !known.contains_key(&key) => {
                let full = format!("{prefix}.{key}");
                let key = if known.contains_key(&full) {
                    full
                } else {
                    key.split_once('.')
                        .map(|(_, rest)| format!("{prefix}.{rest}"))
                        .filter(|k| known.contains_key(k))
                        .unwrap_or(key)
                };
                Err(Error::Config { key, message })
            }
            other => other,
        };
        if self.dataset.shapes == 0 {
            return Err(config_error("dataset.shapes", "must be positive"));
        }
        qualify("dataset", self.dataset.config.validate())?;
        qualify("vae", self.vae.validate())?;
        if self.vae_train.batch == 0 {
            return Err(config_error("vae_train.batch", "must be positive"));
        }
        if self.vae_train.queries == 0 {
            return Err(config_error("vae_train.queries", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.vae_train.near_fraction) {
            return Err(config_error("vae_train.near_fraction", "must lie in [0, 1]"));
        }
        if !(self.vae_train.near_sigma > 0.0) {
            return Err(config_error("vae_train.near_sigma", "must be positive"));
        }
        if self.poses.render.image_size < 3 {
            return Err(config_error("poses.render.image_size", "must be at least 3"));
        }
        if !(0.0..=1.0).contains(&self.poses.noisy_prob) {
            return Err(config_error("poses.noisy_prob", "must lie in [0, 1]"));
        }
        if !(self.poses.jitter >= 0.0 && self.poses.noise_sigma >= 0.0) {
            return Err(config_error("poses.jitter", "jitter and noise_sigma must be non-negative"));
        }
        qualify("flow", self.flow.clone().for_vae(&self.vae).validate())?;
        qualify("flow_train", self.flow_train.validate())?;
        qualify("generate", self.generation().validate())?;
        if self.metrics.samples == 0 {
            return Err(config_error("metrics.samples", "must be positive"));
        }
        if !(self.metrics.tau > 0.0) {
            return Err(config_error("metrics.tau", "must be positive"));
        }
        Ok(())
    }

    /// Writes the flat effective configuration as pretty JSON.
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.flatten())
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn flatten_into(v: &Value, prefix: &str, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(child, &key, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config keys never shadow a leaf");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn same_kind(a: &Value, b: &Value) -> bool {
    std::mem::discriminant(a) == std::mem::discriminant(b) || a.is_null()
}

/// Parses a `--set` value: JSON when it parses, otherwise a bare string.
pub fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

/// Reads a flat JSON object of dotted keys.
pub fn read_overrides(path: &Path) -> Result<Vec<(String, Value)>> {
    let v: Value = crate::io::read_json(path)?;
    match v {
        Value::Object(m) => Ok(m.into_iter().collect()),
        _ => Err(Error::Format("config file must hold a JSON object of dotted keys".into()).at(path)),
    }
}
