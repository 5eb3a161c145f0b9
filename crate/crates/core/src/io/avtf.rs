//! AVTF: the little-endian single-tensor container used for features,
//! attention exports and checkpoints.
//!
//! ```text
//! "AVTF" | version u32 = 1 | dtype u8 = 1 (f32) | rank u8 | reserved u16
//!        | extents: rank x u64 | payload: row-major f32 | crc32(payload) u32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{FormatError, Result, StanError};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"AVTF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

const FIXED_HEADER: usize = 12;

pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>, FormatError> {
    if t.rank() == 0 {
        return Err(FormatError::ScalarRank);
    }
    if t.shape().contains(&0) {
        return Err(FormatError::ZeroExtent(t.shape().to_vec()));
    }
    let rank = u8::try_from(t.rank()).map_err(|_| FormatError::ExtentOverflow)?;
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * t.rank() + 4 * t.numel() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(rank);
    out.extend_from_slice(&0u16.to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    let payload_start = out.len();
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decode one container from the front of `bytes`; returns the tensor and
/// the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor<f32>, usize), FormatError> {
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(FormatError::Truncated {
                expected,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    need(FIXED_HEADER)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    if bytes[8] != DTYPE_F32 {
        return Err(FormatError::Dtype(bytes[8]));
    }
    let rank = bytes[9] as usize;
    if rank == 0 {
        return Err(FormatError::ScalarRank);
    }
    let extents_end = FIXED_HEADER + 8 * rank;
    need(extents_end)?;
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for i in 0..rank {
        let off = FIXED_HEADER + 8 * i;
        let e = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let e = usize::try_from(e).map_err(|_| FormatError::ExtentOverflow)?;
        numel = numel.checked_mul(e).ok_or(FormatError::ExtentOverflow)?;
        shape.push(e);
    }
    if shape.contains(&0) {
        return Err(FormatError::ZeroExtent(shape));
    }
    let payload_len = numel.checked_mul(4).ok_or(FormatError::ExtentOverflow)?;
    let total = extents_end
        .checked_add(payload_len)
        .and_then(|n| n.checked_add(4))
        .ok_or(FormatError::ExtentOverflow)?;
    need(total)?;
    let payload = &bytes[extents_end..extents_end + payload_len];
    let stored = u32::from_le_bytes(bytes[total - 4..total].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor::new(&shape, data).expect("numel checked");
    Ok((t, total))
}

/// Decode a buffer holding exactly one container.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>, FormatError> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FormatError::Trailing(bytes.len() - used));
    }
    Ok(t)
}

pub fn write_feature_file(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t).map_err(|kind| StanError::Format {
        path: path.to_path_buf(),
        kind,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| StanError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| StanError::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StanError::io(path, e))?;
    decode(&bytes).map_err(|kind| StanError::Format {
        path: path.to_path_buf(),
        kind,
    })
}
