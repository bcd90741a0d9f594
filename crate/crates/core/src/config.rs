//! Experiment configuration as one flat JSON object of dotted keys, e.g.
//! `{"model.beta": 0.6, "train.epochs": 100}`. Keys absent from a file keep
//! their defaults; keys that match no setting are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::harness::SyntheticSpec;
use crate::model::CoKnowConfig;
use crate::numerics::SgdCosineConfig;
use crate::prompting::DEFAULT_TEMPLATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            lr_min: 0.0,
            momentum: 0.9,
        }
    }
}

impl OptimConfig {
    pub fn schedule(&self, total_steps: usize) -> SgdCosineConfig {
        SgdCosineConfig {
            lr_max: self.lr,
            lr_min: self.lr_min,
            total_steps: total_steps.max(1),
            momentum: self.momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            shots: vec![1, 2, 4, 8, 16],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: CoKnowConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub encoder: EncoderConfig,
    pub template: String,
}

impl Default for RunConfig {
    /// The pinned toy benchmark.
    fn default() -> Self {
        Self {
            model: CoKnowConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticSpec::default(),
            encoder: EncoderConfig::default(),
            template: DEFAULT_TEMPLATE.into(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(p) = parts.next() {
            if parts.peek().is_none() {
                node.insert(p.to_string(), v.clone());
            } else {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("prefix keys are objects");
            }
        }
    }
    Value::Object(root)
}

impl RunConfig {
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten(
            "",
            &serde_json::to_value(self).expect("config serializes"),
            &mut out,
        );
        out
    }

    pub fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(unflatten(flat))
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overlays `overrides` on `self`, rejecting unknown keys.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, Value>) -> Result<Self> {
        let mut flat = self.to_flat();
        for (k, v) in overrides {
            match flat.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        Self::from_flat(&flat)
    }

    /// Parses a flat JSON object on top of the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let Value::Object(m) = v else {
            return Err(Error::Config("config file must be a JSON object".into()));
        };
        let mut overrides = BTreeMap::new();
        for (k, v) in m {
            if v.is_object() {
                return Err(Error::Config(format!(
                    "config key {k:?}: use flat dotted keys, not nested objects"
                )));
            }
            overrides.insert(k, v);
        }
        Self::default().with_overrides(&overrides)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Pretty flat JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_flat()).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.encoder.validate()?;
        self.optim.schedule(1).validate()?;
        crate::prompting::HandcraftedTemplate::new(self.template.clone())?;
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be positive".into(),
            ));
        }
        if self.train.shots.contains(&0) {
            return Err(Error::Config("train.shots entries must be positive".into()));
        }
        if self.data.d_in != self.encoder.d_in {
            return Err(Error::Config(format!(
                "data.d_in ({}) must equal encoder.d_in ({})",
                self.data.d_in, self.encoder.d_in
            )));
        }
        Ok(())
    }
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Input(format!("override {s:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
