//! `QNN1` binary checkpoints.
//!
//! Layout (little-endian): magic `QNN1`; `u32` input_dim; `u32` GRU count then one
//! `u32` per GRU width; `u32` hidden dense count then one `u32` per width; `f64`
//! dropout rate; `u64` parameter count; then every parameter as `f64` in
//! declaration order (per GRU `W, U, b`, per dense layer `W, b`, head last).

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::params::{NetworkParams, NetworkSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QNN1";

pub fn encode_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let spec = &params.spec;
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.gru_units.len() as u32).to_le_bytes());
    for &u in &spec.gru_units {
        out.extend_from_slice(&(u as u32).to_le_bytes());
    }
    out.extend_from_slice(&(spec.dense_units.len() as u32).to_le_bytes());
    for &u in &spec.dense_units {
        out.extend_from_slice(&(u as u32).to_le_bytes());
    }
    out.extend_from_slice(&spec.dropout.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<NetworkParams> {
    let truncated = |_| Error::format(origin, "truncated checkpoint");
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "missing QNN1 magic"));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(4);
    let input_dim = read_u32(&mut cur).map_err(truncated)? as usize;
    let n_gru = read_u32(&mut cur).map_err(truncated)? as usize;
    if n_gru > 1024 {
        return Err(Error::format(origin, format!("implausible GRU count {n_gru}")));
    }
    let gru_units = (0..n_gru)
        .map(|_| read_u32(&mut cur).map(|u| u as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(truncated)?;
    let n_dense = read_u32(&mut cur).map_err(truncated)? as usize;
    if n_dense > 1024 {
        return Err(Error::format(origin, format!("implausible dense count {n_dense}")));
    }
    let dense_units = (0..n_dense)
        .map(|_| read_u32(&mut cur).map(|u| u as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(truncated)?;
    let dropout = f64::from_bits(read_u64(&mut cur).map_err(truncated)?);
    let count = read_u64(&mut cur).map_err(truncated)? as usize;

    let spec = NetworkSpec {
        input_dim,
        gru_units,
        dense_units,
        dropout,
    };
    let mut params = NetworkParams::zeros(&spec)
        .map_err(|e| Error::format(origin, format!("bad layer spec: {e}")))?;
    if count != params.len() {
        return Err(Error::format(
            origin,
            format!("header declares {count} parameters, layer spec implies {}", params.len()),
        ));
    }
    let start = cur.position() as usize;
    let payload = &bytes[start..];
    if payload.len() != 8 * count {
        return Err(Error::format(
            origin,
            format!("expected {} payload bytes, found {}", 8 * count, payload.len()),
        ));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    params.load_flat(&flat)?;
    Ok(params)
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
