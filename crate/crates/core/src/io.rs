//! On-disk formats: accelerogram CSV, dataset manifest, `QCT1` fused tensors and
//! intensity tables.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cepstral::CepstralKind;
use crate::error::{Error, Result};
use crate::features::{FusedTensor, IntensityVector, SensorSet};
use crate::signal::{AccelRecord, ChannelId};

/// Time steps may deviate from their mean by this fraction.
pub const SR_UNIFORMITY_TOL: f64 = 1e-6;

pub const TENSOR_MAGIC: &[u8; 4] = b"QCT1";
pub const MANIFEST_FORMAT: &str = "qc-dataset";
pub const MANIFEST_VERSION: u32 = 1;

/// Channels read from one CSV file, in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordTable {
    pub sr: f64,
    pub channels: Vec<AccelRecord>,
}

impl RecordTable {
    /// The four pier channels of a multi-channel file.
    pub fn into_sensor_set(self) -> Result<SensorSet> {
        let n = self.channels.len();
        let mut it = self.channels.into_iter();
        match (it.next(), it.next(), it.next(), it.next(), it.next()) {
            (Some(tx), Some(ty), Some(bx), Some(by), None) => SensorSet::new(tx, ty, bx, by),
            _ => Err(Error::InvalidRecord(format!(
                "expected 4 sensor channels, found {n}"
            ))),
        }
    }
}

fn channel_for(name: &str) -> Option<ChannelId> {
    ChannelId::SENSOR_ORDER
        .into_iter()
        .chain([ChannelId::Unspecified])
        .find(|c| c.column_name() == name)
}

/// Sampling rate from a time column. Rates within 1e-9 of an integer are snapped to it
/// so that decimal time stamps reproduce the rate they were written with.
pub fn infer_sr(times: &[f64]) -> std::result::Result<f64, String> {
    if times.len() < 2 {
        return Err("need at least two samples to infer the sampling rate".into());
    }
    let n = times.len();
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err("time column is not increasing".into());
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > SR_UNIFORMITY_TOL * dt {
            return Err(format!(
                "non-uniform time step {step} at row {} (mean {dt})",
                i + 1
            ));
        }
    }
    let sr = 1.0 / dt;
    let nearest = sr.round();
    Ok(if (sr - nearest).abs() <= 1e-9 * nearest {
        nearest
    } else {
        sr
    })
}

/// Read `t,value` or `t,ax_top,ay_top,ax_bot,ay_bot`. `sr` overrides inference from
/// the time column.
pub fn read_record_csv(path: &Path, sr: Option<f64>) -> Result<RecordTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.first() != Some(&"t") || names.len() < 2 {
        return Err(Error::format(path, "first column must be `t`"));
    }
    let ids: Vec<ChannelId> = names[1..]
        .iter()
        .map(|n| channel_for(n).ok_or_else(|| Error::format(path, format!("unknown column `{n}`"))))
        .collect::<Result<_>>()?;
    let layout_ok = ids == [ChannelId::Unspecified] || ids == ChannelId::SENSOR_ORDER;
    if !layout_ok {
        return Err(Error::format(
            path,
            "expected header `t,value` or `t,ax_top,ay_top,ax_bot,ay_bot`",
        ));
    }

    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); ids.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format(path, format!("bad number in row {}, column {j}", row + 1)))
        };
        times.push(parse(0)?);
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(parse(j + 1)?);
        }
    }
    let sr = match sr {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::InvalidArgument(format!("sampling rate {v} must be positive"))),
        None => infer_sr(&times).map_err(|m| Error::format(path, m))?,
    };
    let channels = columns
        .into_iter()
        .zip(ids)
        .map(|(col, id)| AccelRecord::new(col, sr, id))
        .collect::<Result<_>>()?;
    Ok(RecordTable { sr, channels })
}

fn write_table(path: &Path, header: &[&str], sr: f64, cols: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    let n = cols.first().map_or(0, |c| c.len());
    let mut row = Vec::with_capacity(cols.len() + 1);
    for i in 0..n {
        row.clear();
        row.push((i as f64 / sr).to_string());
        row.extend(cols.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sensor_csv(path: &Path, sensors: &SensorSet) -> Result<()> {
    let mut header = vec!["t"];
    header.extend(ChannelId::SENSOR_ORDER.map(ChannelId::column_name));
    let cols = sensors.channels().map(AccelRecord::samples);
    write_table(path, &header, sensors.sr(), &cols)
}

pub fn write_record_csv(path: &Path, rec: &AccelRecord) -> Result<()> {
    write_table(path, &["t", "value"], rec.sr(), &[rec.samples()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub id: String,
    pub gm_id: u32,
    pub angle_deg: f64,
    pub scale: f64,
    pub drift_ratio: f64,
    /// Multi-channel CSV, relative to the manifest's directory.
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub sr: f64,
    pub events: Vec<ManifestEvent>,
}

impl Manifest {
    pub fn new(sr: f64, events: Vec<ManifestEvent>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            sr,
            events,
        }
    }

    pub fn gm_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.events.iter().map(|e| e.gm_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported manifest {} v{}", m.format, m.version),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for e in &m.events {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::format(path, format!("duplicate event id `{}`", e.id)));
        }
        if !(0.0..=1.0).contains(&e.drift_ratio) {
            return Err(Error::format(
                path,
                format!("event `{}` has drift ratio {} outside [0, 1]", e.id, e.drift_ratio),
            ));
        }
    }
    Ok(m)
}

/// Load the sensors of one manifest event. `base` is the manifest's directory.
pub fn load_event(base: &Path, event: &ManifestEvent, sr: f64) -> Result<SensorSet> {
    let path: PathBuf = base.join(&event.record);
    read_record_csv(&path, Some(sr))?.into_sensor_set()
}

fn kind_code(kind: CepstralKind) -> u32 {
    match kind {
        CepstralKind::Mfb => 0,
        CepstralKind::Mfcc => 1,
    }
}

/// `QCT1`: magic, then u32 kind (0 MFB, 1 MFCC), u32 n_w, u32 n_cols, then the
/// n_w valid rows as row-major f64, all little-endian. Padding is rebuilt on load.
pub fn encode_tensor(t: &FusedTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.n_w() * t.n_cols());
    out.extend_from_slice(TENSOR_MAGIC);
    for v in [kind_code(t.kind()), t.n_w() as u32, t.n_cols() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in t.valid_rows().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<FusedTensor> {
    let bad = |m: &str| Error::format(origin, m.to_string());
    if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing QCT1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let kind = match word(1) {
        0 => CepstralKind::Mfb,
        1 => CepstralKind::Mfcc,
        k => return Err(bad(&format!("unknown tensor kind {k}"))),
    };
    let (n_w, n_cols) = (word(2) as usize, word(3) as usize);
    let body = &bytes[16..];
    if body.len() != 8 * n_w * n_cols {
        return Err(bad(&format!(
            "payload is {} bytes, header implies {n_w}x{n_cols}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite tensor value"));
    }
    let rows = Array2::from_shape_vec((n_w, n_cols), values).map_err(|e| bad(&e.to_string()))?;
    FusedTensor::from_valid_rows(rows, kind).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor(path: &Path, t: &FusedTensor) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<FusedTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Valid rows as CSV, one row per frame.
pub fn write_tensor_csv(path: &Path, t: &FusedTensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = (0..t.n_cols()).map(|j| format!("c{j}")).collect();
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for row in t.valid_rows().rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Intensity features for many events: header `id,<channel>_eta<η>,...`.
pub fn write_intensity_csv(path: &Path, rows: &[(String, IntensityVector)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let etas = rows.first().map(|(_, v)| v.etas.clone()).unwrap_or_default();
    let mut header = vec!["id".to_string()];
    for ch in ChannelId::SENSOR_ORDER {
        header.extend(etas.iter().map(|eta| format!("{}_eta{eta}", ch.column_name())));
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, v) in rows {
        if v.etas != etas {
            return Err(Error::ShapeMismatch(format!("event {id} uses a different eta grid")));
        }
        let mut rec = vec![id.clone()];
        rec.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of (event id, feature values) from an intensity table.
pub fn read_intensity_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let width = reader.headers().map_err(|e| Error::csv(path, e))?.len();
    if width < 2 {
        return Err(Error::format(path, "intensity table has no feature columns"));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?;
        if values.len() != width - 1 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("row {} is malformed", row + 1)));
        }
        out.push((rec[0].to_string(), values));
    }
    Ok(out)
}
