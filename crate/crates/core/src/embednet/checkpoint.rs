use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetArch, NetworkParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TFNP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: NetArch,
    init_seed: u64,
    /// `[fan_in, fan_out]` per layer.
    shapes: Vec<[usize; 2]>,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Magic, version, JSON header length and header, parameter count, then
/// little-endian f64 values.
pub fn encode_params(params: &NetworkParams) -> Vec<u8> {
    let header = Header {
        arch: params.arch.clone(),
        init_seed: params.init_seed,
        shapes: params.layout().layers.iter().map(|l| [l.fan_in, l.fan_out]).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(24 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(format_err(path, "truncated checkpoint"));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u64(bytes: &mut &[u8], path: &Path) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8, path)?.try_into().unwrap()))
}

pub fn decode_params(mut bytes: &[u8], path: &Path) -> Result<NetworkParams> {
    let b = &mut bytes;
    if take(b, 4, path)? != MAGIC {
        return Err(format_err(path, "not a parameter checkpoint"));
    }
    let version = u32::from_le_bytes(take(b, 4, path)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = take_u64(b, path)? as usize;
    let header: Header = serde_json::from_slice(take(b, hlen, path)?).map_err(|e| Error::json(path, e))?;
    let n = take_u64(b, path)? as usize;
    let payload = take(b, n.checked_mul(8).ok_or_else(|| format_err(path, "bad length"))?, path)?;
    if !b.is_empty() {
        return Err(format_err(path, "trailing bytes after parameters"));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = NetworkParams::from_data(header.arch, header.init_seed, data)?;
    let shapes: Vec<[usize; 2]> = params.layout().layers.iter().map(|l| [l.fan_in, l.fan_out]).collect();
    if shapes != header.shapes {
        return Err(format_err(path, "layer shapes disagree with the architecture"));
    }
    Ok(params)
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, path)
}

pub fn write_loss_curve(curve: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, v) in curve.iter().enumerate() {
        s.push_str(&format!("{},{v:?}\n", i + 1));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Row count, dimension, then row-major little-endian f64 values.
pub fn write_embeddings(rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(16 + 8 * rows.len() * dim);
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for r in rows {
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let b = &mut bytes.as_slice();
    let n = take_u64(b, path)? as usize;
    let dim = take_u64(b, path)? as usize;
    if b.len() != n.saturating_mul(dim).saturating_mul(8) {
        return Err(format_err(path, "embedding payload size mismatch"));
    }
    if dim == 0 {
        return Ok(vec![Vec::new(); n]);
    }
    Ok(b.chunks_exact(8 * dim)
        .map(|row| row.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        .collect())
}
