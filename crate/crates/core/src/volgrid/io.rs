//! The `.vvol` container.
//!
//! Layout: the 6 bytes `VVOL1\n`, one JSON header line terminated by `\n`
//! (`{"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"kind":"...","dtype":"f32"}`),
//! then `nx*ny*nz` little-endian binary32 values in x-fastest order.
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write, so a
//! write/read round trip is exact for any volume whose values are
//! representable in binary32 (every volume that was itself read from disk).

use super::{VolumeError, VolumeGrid, VolumeKind};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const VVOL_MAGIC: &[u8; 6] = b"VVOL1\n";

#[derive(Debug, Error)]
pub enum VvolError {
    #[error("bad magic")]
    BadMagic,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("payload size mismatch: header expects {expected} values, found {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },
    #[error("invalid volume: {0}")]
    Invalid(#[from] VolumeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl VvolError {
    /// Stable machine-readable code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            VvolError::BadMagic => "bad_magic",
            VvolError::BadHeader(_) => "bad_header",
            VvolError::UnknownDtype(_) => "unknown_dtype",
            VvolError::UnknownKind(_) => "unknown_kind",
            VvolError::Truncated(_) => "truncated",
            VvolError::PayloadSizeMismatch { .. } => "payload_size_mismatch",
            VvolError::Invalid(_) => "invalid_volume",
            VvolError::Io(_) => "io",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    kind: String,
    dtype: String,
}

pub fn write_vvol_to<W: Write>(vol: &VolumeGrid, mut w: W) -> Result<(), VvolError> {
    let header = Header {
        dims: vol.dims(),
        spacing: vol.spacing(),
        kind: vol.kind().as_str().to_string(),
        dtype: "f32".to_string(),
    };
    let line = serde_json::to_string(&header).map_err(|e| VvolError::BadHeader(e.to_string()))?;
    w.write_all(VVOL_MAGIC)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut payload = Vec::with_capacity(vol.len() * 4);
    for &v in vol.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn write_vvol(vol: &VolumeGrid, path: impl AsRef<Path>) -> Result<(), VvolError> {
    let f = File::create(path)?;
    write_vvol_to(vol, BufWriter::new(f))
}

pub fn read_vvol_from<R: Read>(mut r: R) -> Result<VolumeGrid, VvolError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn read_vvol(path: impl AsRef<Path>) -> Result<VolumeGrid, VvolError> {
    let f = File::open(path)?;
    read_vvol_from(BufReader::new(f))
}

fn decode(bytes: &[u8]) -> Result<VolumeGrid, VvolError> {
    if bytes.len() < VVOL_MAGIC.len() || &bytes[..VVOL_MAGIC.len()] != VVOL_MAGIC {
        return Err(VvolError::BadMagic);
    }
    let rest = &bytes[VVOL_MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| VvolError::Truncated("header line has no terminating newline".into()))?;
    let header_text = std::str::from_utf8(&rest[..nl])
        .map_err(|e| VvolError::BadHeader(format!("header is not UTF-8: {e}")))?;
    let header: Header =
        serde_json::from_str(header_text).map_err(|e| VvolError::BadHeader(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(VvolError::UnknownDtype(header.dtype));
    }
    let kind = VolumeKind::parse(&header.kind).ok_or(VvolError::UnknownKind(header.kind))?;
    let payload = &rest[nl + 1..];
    if !payload.len().is_multiple_of(4) {
        return Err(VvolError::Truncated(format!(
            "payload of {} bytes is not a whole number of f32 values",
            payload.len()
        )));
    }
    let expected = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| VvolError::BadHeader("dims overflow".into()))?;
    let actual = payload.len() / 4;
    if actual != expected {
        return Err(VvolError::PayloadSizeMismatch { expected, actual });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(VolumeGrid::new(header.dims, header.spacing, kind, data)?)
}
