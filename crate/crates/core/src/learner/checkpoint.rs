use std::io::{Read, Write};

use super::model::{Architecture, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"DGCKPT1\n";

/// Writes `MAGIC`, a JSON architecture line, the parameter count as a
/// little-endian `u64`, then every parameter as a little-endian `f64`.
pub fn write_checkpoint<T: Scalar, W: Write>(mut out: W, params: &ModelParams<T>) -> Result<()> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let arch = serde_json::to_string(&params.arch).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(arch.as_bytes()).map_err(io)?;
    out.write_all(b"\n").map_err(io)?;
    out.write_all(&(params.theta.len() as u64).to_le_bytes()).map_err(io)?;
    for t in &params.theta {
        out.write_all(&t.to_f64_lossy().to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<ModelParams<T>> {
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let rest = buf
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| Error::Checkpoint("bad magic".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing descriptor".into()))?;
    let arch: Architecture =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let body = &rest[nl + 1..];
    if body.len() < 8 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let n = u64::from_le_bytes(body[..8].try_into().expect("8 bytes")) as usize;
    let data = &body[8..];
    if data.len() != n * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {n} parameters, found {} bytes",
            data.len()
        )));
    }
    let theta = data
        .chunks_exact(8)
        .map(|c| T::c(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    ModelParams::new(arch, theta)
}
