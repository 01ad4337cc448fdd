//! Binary checkpoint format.
//!
//! ```text
//! magic      "GTN1"
//! version    u16
//! config     u32 byte length, then key=value lines (UTF-8)
//! count      u32 number of tensor records
//! record     u16 name length, name bytes, u8 dtype (1 = f32, 2 = f64),
//!            u8 rank, rank x u32 dims, row-major payload
//! ```
//!
//! All integers and floats are little-endian. A JSON sidecar at `<path>.json`
//! repeats the config for inspection; it is never read back.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GtnConfig, GtnNetwork, ModelError};
use crate::nn::{ParameterSet, Tensor};

pub const MAGIC: &[u8; 4] = b"GTN1";
pub const FORMAT_VERSION: u16 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

/// Payload precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint format version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match its config: {0}")]
    Audit(#[from] ModelError),
}

/// Path of the JSON sidecar written next to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    version: u16,
    precision: Precision,
    config: &'a GtnConfig,
    parameters: Vec<(&'a str, &'a [usize])>,
}

/// Encodes config and parameters into checkpoint bytes.
pub fn encode(config: &GtnConfig, params: &ParameterSet, precision: Precision) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = config.to_kv_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value, _) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match precision {
            Precision::F32 => DTYPE_F32,
            Precision::F64 => DTYPE_F64,
        });
        out.push(value.shape().len() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in value.data() {
            match precision {
                Precision::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    out
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Truncated(what),
        _ => CheckpointError::Io(e),
    })
}

fn read_u8<R: Read>(r: &mut R, what: &'static str) -> Result<u8, CheckpointError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R, what: &'static str) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Decodes a checkpoint stream into its config and audited parameters.
pub fn decode<R: Read>(mut r: R) -> Result<(GtnConfig, ParameterSet), CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u16(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let text_len = read_u32(&mut r, "config length")? as usize;
    let mut text = vec![0u8; text_len];
    read_exact(&mut r, &mut text, "config block")?;
    let text = String::from_utf8(text).map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
    let config = GtnConfig::from_kv_text(&text)?;

    let count = read_u32(&mut r, "tensor count")? as usize;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r, "tensor name length")? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let dtype = read_u8(&mut r, "dtype")?;
        let rank = read_u8(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F32 => {
                let mut raw = vec![0u8; n * 4];
                read_exact(&mut r, &mut raw, "payload")?;
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
            DTYPE_F64 => {
                let mut raw = vec![0u8; n * 8];
                read_exact(&mut r, &mut raw, "payload")?;
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
            other => return Err(CheckpointError::Malformed(format!("unknown dtype tag {other} for `{name}`"))),
        };
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("`{name}`: {e}")))?;
        params
            .insert(name, tensor)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes after last tensor".into()));
    }
    super::audit_parameters(&config, &params)?;
    Ok((config, params))
}

/// Writes `net` to `path` plus a JSON sidecar.
pub fn save_checkpoint(net: &GtnNetwork, path: &Path, precision: Precision) -> Result<(), CheckpointError> {
    let bytes = encode(net.config(), net.params(), precision);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    let sidecar = Sidecar {
        format: "GTN1",
        version: FORMAT_VERSION,
        precision,
        config: net.config(),
        parameters: net.params().iter().map(|(n, v, _)| (n, v.shape())).collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a checkpoint and rebuilds the network. Recurrent state starts at zero.
pub fn load_checkpoint(path: &Path) -> Result<GtnNetwork, CheckpointError> {
    let (config, params) = decode(BufReader::new(File::open(path)?))?;
    Ok(GtnNetwork::from_params(config, params)?)
}
