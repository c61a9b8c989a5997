//! Run configuration: one JSON document covering data generation, the
//! network, training, losses and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::net::{EdgeNetConfig, LossConfig, NetArch};
use crate::synth::SynthSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub net: NetArch,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small network trained from scratch on 64×64 synthetic images.
    pub fn desk() -> Self {
        Self {
            synth: SynthSpec::default(),
            net: NetArch::desk(),
            train: TrainConfig::desk(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Full-width network with the optimizer settings meant for a
    /// pretrained backbone.
    pub fn full() -> Self {
        Self {
            net: NetArch::default(),
            train: TrainConfig::default(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (desk|full)"))),
        }
    }

    /// Parses a document; keys it leaves out keep their desk-preset values.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(e.to_string());
        let doc: Value = serde_json::from_str(text).map_err(bad)?;
        let mut merged = serde_json::to_value(Self::desk()).expect("config serializes");
        overlay(&mut merged, doc);
        let cfg: Self = serde_json::from_value(merged).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn net_config(&self) -> EdgeNetConfig {
        EdgeNetConfig {
            arch: self.net,
            loss: self.loss.clone(),
        }
    }

    /// Checks every section; problems surface as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.synth.validate().map_err(as_config)?;
        self.net_config().validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        self.eval.validate().map_err(as_config)
    }
}

/// Recursively replaces `base` entries with those of `top`; arrays and
/// scalars are replaced whole.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
