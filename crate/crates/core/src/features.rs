//! Cumulative-intensity features, multi-sensor fusion and fixed-length padding.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::cepstral::{CepstralExtractor, CepstralKind, CepstralTensor};
use crate::error::{Error, Result};
use crate::signal::{AccelRecord, ChannelId};

/// Every event is padded to this many frames.
pub const FUSED_FRAMES: usize = 500;

/// Exponent grid {0.2, 0.4, ..., 2.0}.
pub const DEFAULT_ETAS: [f64; 10] = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0];

/// Trapezoidal approximation of the integral of `|a(t)|^eta` over the record.
pub fn intensity(rec: &AccelRecord, eta: f64) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "intensity exponent must be positive, got {eta}"
        )));
    }
    let samples = rec.samples();
    if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample {
            channel: rec.channel().to_string(),
            index,
        });
    }
    let powered: Vec<f64> = samples.iter().map(|a| a.abs().powf(eta)).collect();
    let dt = rec.dt();
    let inner: f64 = powered.windows(2).map(|w| w[0] + w[1]).sum();
    let value = 0.5 * dt * inner;
    if !value.is_finite() {
        return Err(Error::Divergence {
            location: format!("intensity integral of channel {} (eta {eta})", rec.channel()),
        });
    }
    Ok(value)
}

/// The four accelerometer channels of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSet {
    pub top_x: AccelRecord,
    pub top_y: AccelRecord,
    pub bottom_x: AccelRecord,
    pub bottom_y: AccelRecord,
}

impl SensorSet {
    pub fn new(
        top_x: AccelRecord,
        top_y: AccelRecord,
        bottom_x: AccelRecord,
        bottom_y: AccelRecord,
    ) -> Result<Self> {
        let set = Self {
            top_x,
            top_y,
            bottom_x,
            bottom_y,
        };
        set.check_consistent()?;
        Ok(set)
    }

    /// Channels in `ChannelId::SENSOR_ORDER`.
    pub fn channels(&self) -> [&AccelRecord; 4] {
        [&self.top_x, &self.top_y, &self.bottom_x, &self.bottom_y]
    }

    pub fn sr(&self) -> f64 {
        self.top_x.sr()
    }

    fn check_consistent(&self) -> Result<()> {
        let reference = &self.top_x;
        for (rec, id) in self.channels().into_iter().zip(ChannelId::SENSOR_ORDER) {
            if rec.sr() != reference.sr() || rec.len() != reference.len() {
                return Err(Error::ShapeMismatch(format!(
                    "channel {id}: {} samples at {} Hz, expected {} samples at {} Hz",
                    rec.len(),
                    rec.sr(),
                    reference.len(),
                    reference.sr()
                )));
            }
        }
        Ok(())
    }
}

/// `I^eta` for every (channel, eta) pair, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityVector {
    pub values: Vec<f64>,
    pub etas: Vec<f64>,
}

impl IntensityVector {
    pub fn n_channels(&self) -> usize {
        self.values.len() / self.etas.len().max(1)
    }

    pub fn get(&self, channel: usize, eta_index: usize) -> f64 {
        self.values[channel * self.etas.len() + eta_index]
    }
}

pub fn intensity_vector(sensors: &SensorSet, etas: &[f64]) -> Result<IntensityVector> {
    sensors.check_consistent()?;
    if etas.is_empty() {
        return Err(Error::InvalidArgument("empty eta grid".into()));
    }
    let values = sensors
        .channels()
        .into_iter()
        .flat_map(|rec| etas.iter().map(move |&eta| intensity(rec, eta)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(IntensityVector {
        values,
        etas: etas.to_vec(),
    })
}

/// Top-minus-bottom feature differences for X then Y, padded to [`FUSED_FRAMES`] rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTensor {
    values: Array2<f64>,
    n_w: usize,
    kind: CepstralKind,
}

impl FusedTensor {
    /// Rebuild from the valid rows only, padding with zeros.
    pub fn from_valid_rows(rows: Array2<f64>, kind: CepstralKind) -> Result<Self> {
        let n_w = rows.nrows();
        if n_w > FUSED_FRAMES {
            return Err(Error::ShapeMismatch(format!(
                "{n_w} frames exceed the {FUSED_FRAMES}-frame cap"
            )));
        }
        if n_w == 0 {
            return Err(Error::ShapeMismatch("fused tensor has no valid frames".into()));
        }
        let mut values = Array2::zeros((FUSED_FRAMES, rows.ncols()));
        values.slice_mut(s![..n_w, ..]).assign(&rows);
        Ok(Self { values, n_w, kind })
    }

    /// Full padded matrix, `FUSED_FRAMES` rows.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn valid_rows(&self) -> ndarray::ArrayView2<'_, f64> {
        self.values.slice(s![..self.n_w, ..])
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn kind(&self) -> CepstralKind {
        self.kind
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..FUSED_FRAMES).map(|i| i < self.n_w).collect()
    }
}

pub fn fuse(
    top_x: &CepstralTensor,
    bot_x: &CepstralTensor,
    top_y: &CepstralTensor,
    bot_y: &CepstralTensor,
) -> Result<FusedTensor> {
    let kind = top_x.kind();
    let (n_w, n_keep) = top_x.values().dim();
    for (name, t) in [("bottom X", bot_x), ("top Y", top_y), ("bottom Y", bot_y)] {
        if t.values().dim() != (n_w, n_keep) || t.kind() != kind {
            return Err(Error::ShapeMismatch(format!(
                "{name} tensor is {:?} {:?}, expected {kind:?} {n_w}x{n_keep}",
                t.kind(),
                t.values().dim()
            )));
        }
    }
    if n_w > FUSED_FRAMES {
        return Err(Error::ShapeMismatch(format!(
            "{n_w} frames exceed the {FUSED_FRAMES}-frame cap"
        )));
    }
    let mut rows = Array2::zeros((n_w, 2 * n_keep));
    rows.slice_mut(s![.., ..n_keep])
        .assign(&(top_x.values() - bot_x.values()));
    rows.slice_mut(s![.., n_keep..])
        .assign(&(top_y.values() - bot_y.values()));
    FusedTensor::from_valid_rows(rows, kind)
}

/// Extract and fuse the cepstral features of all four channels.
pub fn fused_features(
    extractor: &CepstralExtractor,
    sensors: &SensorSet,
    kind: CepstralKind,
) -> Result<FusedTensor> {
    let tx = extractor.extract(&sensors.top_x, kind)?;
    let bx = extractor.extract(&sensors.bottom_x, kind)?;
    let ty = extractor.extract(&sensors.top_y, kind)?;
    let by = extractor.extract(&sensors.bottom_y, kind)?;
    fuse(&tx, &bx, &ty, &by)
}

/// Per-column standardization fitted on training rows. Off unless a run enables it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for row in rows {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
                sq = vec![0.0; row.len()];
            }
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return None;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Some(Self { mean, std })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}
