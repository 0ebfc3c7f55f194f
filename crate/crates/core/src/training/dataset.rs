use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::cepstral::CepstralKind;
use crate::error::{Error, Result};
use crate::features::{FusedTensor, Standardizer};
use crate::neural::{NetInput, NetworkSpec, TARGET_AMPLIFICATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfb,
    Mfcc,
    Intensity,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfb, FeatureKind::Mfcc, FeatureKind::Intensity];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfb => "mfb",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Intensity => "intensity",
        }
    }

    pub fn cepstral(self) -> Option<CepstralKind> {
        match self {
            FeatureKind::Mfb => Some(CepstralKind::Mfb),
            FeatureKind::Mfcc => Some(CepstralKind::Mfcc),
            FeatureKind::Intensity => None,
        }
    }

    /// Learning rate used when the config does not set one.
    pub fn default_lr(self) -> f64 {
        match self {
            FeatureKind::Intensity => 1.0e-6,
            _ => 2.0e-3,
        }
    }

    /// Sequence kinds get the full GRU stack; intensity vectors feed the bottleneck.
    pub fn default_spec(self, input_dim: usize) -> NetworkSpec {
        match self {
            FeatureKind::Intensity => NetworkSpec::bottleneck_only(input_dim),
            _ => NetworkSpec::drift_regressor(input_dim),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfb" => Ok(FeatureKind::Mfb),
            "mfcc" => Ok(FeatureKind::Mfcc),
            "intensity" => Ok(FeatureKind::Intensity),
            _ => Err(Error::InvalidArgument(format!(
                "unknown feature kind `{s}` (expected mfb, mfcc or intensity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleFeatures {
    Sequence(FusedTensor),
    Vector(Vec<f64>),
}

impl SampleFeatures {
    pub fn width(&self) -> usize {
        match self {
            SampleFeatures::Sequence(t) => t.n_cols(),
            SampleFeatures::Vector(v) => v.len(),
        }
    }
}

/// One labelled event ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub gm_id: u32,
    /// Drift as a dimensionless fraction.
    pub drift_ratio: f64,
    pub features: SampleFeatures,
}

impl Sample {
    /// Training target: drift fraction times [`TARGET_AMPLIFICATION`].
    pub fn target(&self) -> f64 {
        self.drift_ratio * TARGET_AMPLIFICATION
    }
}

/// Samples of one feature kind with a common width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: FeatureKind,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(kind: FeatureKind, samples: Vec<Sample>) -> Result<Self> {
        let width = samples.first().map(|s| s.features.width());
        for s in &samples {
            let matches_kind = match (&s.features, kind.cepstral()) {
                (SampleFeatures::Sequence(t), Some(k)) => t.kind() == k,
                (SampleFeatures::Vector(_), None) => true,
                _ => false,
            };
            if !matches_kind || Some(s.features.width()) != width {
                return Err(Error::ShapeMismatch(format!(
                    "sample `{}` does not carry {kind} features of width {}",
                    s.id,
                    width.unwrap_or(0)
                )));
            }
            if !(0.0..TARGET_AMPLIFICATION.recip()).contains(&s.drift_ratio) {
                return Err(Error::InvalidArgument(format!(
                    "sample `{}` drift {} is outside [0, 0.1)",
                    s.id, s.drift_ratio
                )));
            }
        }
        Ok(Self { kind, samples })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.width())
    }

    /// Samples whose ground motion passes `keep`, in dataset order.
    pub fn subset(&self, keep: impl Fn(u32) -> bool) -> Dataset {
        Dataset {
            kind: self.kind,
            samples: self.samples.iter().filter(|s| keep(s.gm_id)).cloned().collect(),
        }
    }

    /// Fit a per-column standardizer on every valid row or vector.
    pub fn fit_standardizer(&self) -> Option<Standardizer> {
        Standardizer::fit(self.samples.iter().flat_map(|s| -> Vec<&[f64]> {
            match &s.features {
                SampleFeatures::Sequence(t) => t
                    .values()
                    .as_slice()
                    .expect("standard layout")
                    .chunks(t.n_cols())
                    .take(t.n_w())
                    .collect(),
                SampleFeatures::Vector(v) => vec![v.as_slice()],
            }
        }))
    }

    pub fn standardize(&mut self, st: &Standardizer) -> Result<()> {
        for s in &mut self.samples {
            match &mut s.features {
                SampleFeatures::Sequence(t) => {
                    let mut rows = t.valid_rows().to_owned();
                    for mut row in rows.rows_mut() {
                        st.apply(row.as_slice_mut().expect("standard layout"));
                    }
                    *t = FusedTensor::from_valid_rows(rows, t.kind())?;
                }
                SampleFeatures::Vector(v) => st.apply(v),
            }
        }
        Ok(())
    }
}

/// Batch the given samples into one network input.
pub fn batch_input(samples: &[&Sample]) -> Result<NetInput> {
    match samples.first().map(|s| &s.features) {
        None => Err(Error::InvalidArgument("empty batch".into())),
        Some(SampleFeatures::Sequence(_)) => {
            let mut views: Vec<ArrayView2<'_, f64>> = Vec::with_capacity(samples.len());
            let mut lens = Vec::with_capacity(samples.len());
            for s in samples {
                match &s.features {
                    SampleFeatures::Sequence(t) => {
                        views.push(t.values().view());
                        lens.push(t.n_w());
                    }
                    SampleFeatures::Vector(_) => {
                        return Err(Error::ShapeMismatch("mixed feature types in batch".into()))
                    }
                }
            }
            NetInput::sequences(&views, &lens)
        }
        Some(SampleFeatures::Vector(_)) => {
            let rows = samples
                .iter()
                .map(|s| match &s.features {
                    SampleFeatures::Vector(v) => Ok(v.as_slice()),
                    SampleFeatures::Sequence(_) => {
                        Err(Error::ShapeMismatch("mixed feature types in batch".into()))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            NetInput::vectors(&rows)
        }
    }
}
