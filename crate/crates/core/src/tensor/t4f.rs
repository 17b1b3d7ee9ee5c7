//! T4F: a minimal binary container for one rank-4 f32 tensor.
//!
//! Layout, all little-endian: the magic bytes `T4F1`, four u32 dims
//! `(n, c, h, w)`, then `n*c*h*w` f32 values row-major. The encoding is
//! lossless (raw IEEE bits), so a write/read round trip is bitwise exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor4;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"T4F1";

/// Bytes occupied by the magic plus the four dim fields.
pub const HEADER_LEN: usize = 20;

/// Total record length implied by a T4F header (header + payload), or
/// `None` if the header is short, mis-tagged, or its dims overflow.
pub fn record_len(header: &[u8]) -> Option<usize> {
    if header.len() < HEADER_LEN || header[..4] != MAGIC {
        return None;
    }
    let mut count = 1usize;
    for i in 0..4 {
        let start = 4 + 4 * i;
        let d = u32::from_le_bytes(header[start..start + 4].try_into().unwrap()) as usize;
        count = count.checked_mul(d)?;
    }
    count.checked_mul(4)?.checked_add(HEADER_LEN)
}

/// Serializes a tensor into a fresh byte buffer.
pub fn to_bytes(tensor: &Tensor4) -> Vec<u8> {
    let (n, c, h, w) = tensor.dims();
    let mut out = Vec::with_capacity(20 + tensor.len() * 4);
    out.extend_from_slice(&MAGIC);
    for d in [n, c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in tensor.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a tensor from a byte buffer, validating magic, dims, and length.
///
/// `origin` names the data source in error messages.
pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Tensor4> {
    let fail = |detail: &str| Error::Format {
        path: origin.to_string(),
        detail: detail.to_string(),
    };
    if bytes.len() < 20 {
        return Err(fail("truncated: shorter than the T4F header"));
    }
    if bytes[..4] != MAGIC {
        return Err(fail("bad magic: not a T4F file"));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let start = 4 + 4 * i;
        *d = u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()) as usize;
    }
    let [n, c, h, w] = dims;
    let count = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| fail("dimension overflow"))?;
    let body = &bytes[20..];
    if body.len() != count * 4 {
        return Err(fail(&format!(
            "payload holds {} bytes but dims ({n}, {c}, {h}, {w}) require {}",
            body.len(),
            count * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    Tensor4::new(n, c, h, w, data)
}

/// Writes a tensor to `path` atomically (temp file + rename).
pub fn write(path: &Path, tensor: &Tensor4) -> Result<()> {
    let bytes = to_bytes(tensor);
    write_atomic(path, &bytes)
}

/// Reads a tensor from `path`.
pub fn read(path: &Path) -> Result<Tensor4> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, &path.display().to_string())
}

/// Writes `bytes` to `path` via a sibling temp file and an atomic rename,
/// so readers never observe a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| "artifact".into())
        )),
        None => Path::new(&format!(".{}.tmp", path.display())).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
