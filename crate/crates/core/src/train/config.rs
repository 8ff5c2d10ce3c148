use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::NetConfig;

/// Everything a training run needs. Serialized flat: the network fields sit
/// next to the optimizer fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub net: NetConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Clips per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Random rotation, intensity, and flips, one draw per clip and epoch.
    pub augment: bool,
    /// Zero-pad non-square frames instead of rejecting them.
    pub letterbox: bool,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 16,
            epochs: 80,
            loss_weights: LossWeights::default(),
            seed: 0,
            augment: true,
            letterbox: false,
            train_manifest: None,
            val_manifest: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.loss_weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn known_keys() -> BTreeSet<String> {
        match serde_json::to_value(TrainConfig::default()).expect("config serializes") {
            serde_json::Value::Object(m) => m.keys().cloned().collect(),
            _ => unreachable!("struct serializes to an object"),
        }
    }

    /// Parse from a JSON object, rejecting unknown keys.
    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        if let serde_json::Value::Object(m) = &v {
            let known = Self::known_keys();
            let unknown: Vec<&String> = m.keys().filter(|k| !known.contains(*k)).collect();
            if !unknown.is_empty() {
                return Err(Error::Config(format!("unknown keys {unknown:?}")));
            }
        }
        let c: TrainConfig =
            serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let v = serde_json::to_value(table).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_json_value(v)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_json_value(v)
    }

    pub fn to_toml_string(&self) -> String {
        // Round through JSON so that flattening and `None` paths serialize the
        // same way in both formats.
        let v = serde_json::to_value(self).expect("config serializes");
        let serde_json::Value::Object(m) = v else {
            unreachable!()
        };
        let table: toml::Table = m
            .into_iter()
            .filter(|(_, v)| !v.is_null())
            .map(|(k, v)| (k, serde_json::from_value(v).expect("json maps to toml")))
            .collect();
        toml::to_string(&table).expect("toml serializes")
    }
}

/// Read a `.toml` or `.json` config. Relative manifest paths resolve against
/// the config file's directory.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut c = if is_json {
        TrainConfig::from_json_str(&text)?
    } else {
        TrainConfig::from_toml_str(&text)?
    };
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut c.train_manifest, &mut c.val_manifest].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(c)
}
