//! Run configuration. Files are JSON objects with flat dotted keys such as
//! `"train.batch_size"`; every key not given keeps its default.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use qc_core::cepstral::CepstralConfig;
use qc_core::features::DEFAULT_ETAS;
use qc_core::neural::NadamConfig;
use qc_core::synth::SynthConfig;
use qc_core::training::{FeatureKind, SplitRatios, TrainConfig, DEFAULT_FIT_DEGREE};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSection {
    #[serde(flatten)]
    pub cepstral: CepstralConfig,
    pub etas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mfb: f64,
    pub mfcc: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub standardize: bool,
    pub lr: LearningRates,
    pub nadam: NadamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub fit_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub features: FeatureSection,
    pub split: SplitRatios,
    pub train: TrainSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = TrainConfig::for_kind(FeatureKind::Mfb);
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            features: FeatureSection {
                cepstral: CepstralConfig::default(),
                etas: DEFAULT_ETAS.to_vec(),
            },
            split: SplitRatios::default(),
            train: TrainSection {
                batch_size: base.batch_size,
                patience: base.patience,
                max_epochs: base.max_epochs,
                standardize: base.standardize,
                lr: LearningRates {
                    mfb: FeatureKind::Mfb.default_lr(),
                    mfcc: FeatureKind::Mfcc.default_lr(),
                    intensity: FeatureKind::Intensity.default_lr(),
                },
                nadam: base.nadam,
            },
            report: ReportSection {
                fit_degree: DEFAULT_FIT_DEGREE,
            },
        }
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("prefix keys are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten_into("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    /// Defaults overridden by the given dotted keys.
    pub fn from_flat(overrides: &Map<String, Value>) -> Result<Self, CliError> {
        let mut flat = RunConfig::default().to_flat();
        for (k, v) in overrides {
            match flat.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(CliError::Usage(format!("unknown config key `{k}`"))),
            }
        }
        let cfg: RunConfig = serde_json::from_value(unflatten(&flat))
            .map_err(|e| CliError::Usage(format!("bad config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not JSON: {e}", path.display())))?;
        match value {
            Value::Object(map) => Self::from_flat(&map),
            _ => Err(CliError::Usage(format!(
                "config {} must be a JSON object of dotted keys",
                path.display()
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: qc_core::Error| CliError::Usage(e.to_string());
        self.synth.validate().map_err(usage)?;
        for kind in FeatureKind::ALL {
            self.train_config(kind).validate().map_err(usage)?;
        }
        if self.features.etas.is_empty() || self.features.etas.iter().any(|&e| !(e > 0.0)) {
            return Err(CliError::Usage("features.etas must be positive and non-empty".into()));
        }
        Ok(())
    }

    pub fn lr(&self, kind: FeatureKind) -> f64 {
        match kind {
            FeatureKind::Mfb => self.train.lr.mfb,
            FeatureKind::Mfcc => self.train.lr.mfcc,
            FeatureKind::Intensity => self.train.lr.intensity,
        }
    }

    pub fn train_config(&self, kind: FeatureKind) -> TrainConfig {
        TrainConfig {
            feature_kind: kind,
            batch_size: self.train.batch_size,
            lr: self.lr(kind),
            patience: self.train.patience,
            max_epochs: self.train.max_epochs,
            seed: self.seed,
            standardize: self.train.standardize,
            nadam: self.train.nadam,
        }
    }
}
