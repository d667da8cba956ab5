//! "KSNN v1" parameter files.
//!
//! Layout: magic `KSNN`, `u8` version (1), `u32` LE header length, a JSON
//! header of that many bytes, then every layer's weights (`[out][in][ky][kx]`)
//! followed by its biases, all as contiguous `f32` LE values, layers in
//! input-to-output order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conv::K;
use super::{ConvLayer, DenoiserParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KSNN";
pub const VERSION: u8 = 1;

/// Architecture description stored ahead of the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kernel_size: usize,
    pub widths: Vec<usize>,
    pub activation: String,
    pub residual: bool,
    pub padding: String,
    /// Number of completed training epochs.
    #[serde(default)]
    pub epoch: usize,
    pub layout: String,
}

impl CheckpointHeader {
    fn for_params(params: &DenoiserParams, epoch: usize) -> Self {
        Self {
            kernel_size: K,
            widths: params.widths().to_vec(),
            activation: "relu".into(),
            residual: true,
            padding: "symmetric".into(),
            epoch,
            layout: "per layer: weights [out][in][ky][kx], then bias [out]".into(),
        }
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "KSNN",
        reason: reason.into(),
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &DenoiserParams, epoch: usize) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader::for_params(params, epoch))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    let len = u32::try_from(header.len()).map_err(|_| bad("header too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(params.num_params() * 4);
    for &v in params.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Returns the parameters and the stored header.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(DenoiserParams, CheckpointHeader)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version).map_err(|_| bad("truncated header"))?;
    if version[0] != VERSION {
        return Err(bad(format!("unsupported version {}", version[0])));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(bad("implausible header length"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    if header.kernel_size != K || !header.residual || header.activation != "relu" || header.padding != "symmetric" {
        return Err(bad("unsupported architecture"));
    }
    let mut params = DenoiserParams::zeros(&header.widths).map_err(|e| bad(e.to_string()))?;
    let mut raw = vec![0u8; params.num_params() * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated weights"))?;
    for (v, b) in params.iter_mut().zip(raw.chunks_exact(4)) {
        *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
    }
    let layers: Vec<ConvLayer> = params.layers().to_vec();
    let params = DenoiserParams::from_layers(layers).map_err(|e| bad(e.to_string()))?;
    Ok((params, header))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &DenoiserParams, epoch: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params, epoch)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(DenoiserParams, CheckpointHeader)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
