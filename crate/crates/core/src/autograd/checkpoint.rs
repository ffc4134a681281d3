//! `FZNT` parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FZNT"            4 bytes magic
//! version           u16 (= 1)
//! precision         u8  (32 or 64)
//! epoch             u32
//! config_hash       u64
//! param_count       u32
//! header_crc        u32, CRC-32 of every header byte above
//! per parameter, in registry order:
//!   record_len      u32, length of the body
//!   body:
//!     name_len      u16
//!     name          utf8 bytes
//!     rank          u8
//!     dims          rank x u32
//!     payload       numel x f32|f64
//!   record_crc      u32, CRC-32 of record_len and body
//! ```

use std::path::Path;

use thiserror::Error;

use super::params::Params;
use super::scalar::Scalar;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FZNT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint stores {stored}-bit floats, expected {expected}-bit")]
    PrecisionMismatch { stored: u8, expected: u8 },
    #[error("checkpoint header truncated while reading {0}")]
    TruncatedHeader(&'static str),
    #[error("checkpoint header checksum mismatch")]
    HeaderChecksum,
    #[error("parameter record {record}: truncated")]
    Truncated { record: usize },
    #[error("parameter record {record}: checksum mismatch")]
    Checksum { record: usize },
    #[error("parameter record {record}: {reason}")]
    InvalidRecord { record: usize, reason: String },
    #[error("{0} trailing bytes after last parameter")]
    TrailingBytes(usize),
}

/// A parameter snapshot plus the metadata needed to tie it to a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub epoch: u32,
    pub config_hash: u64,
    pub params: Params<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::BITS);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        let mut body = Vec::new();
        for p in self.params.iter() {
            body.clear();
            let name = p.name.as_bytes();
            body.extend_from_slice(&(name.len() as u16).to_le_bytes());
            body.extend_from_slice(name);
            body.push(p.tensor.rank() as u8);
            for &d in p.tensor.shape() {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.tensor.data() {
                v.write_le(&mut body);
            }
            let start = out.len();
            out.extend_from_slice(&(body.len() as u32).to_le_bytes());
            out.extend_from_slice(&body);
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        use CheckpointError::TruncatedHeader as Short;
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or(Short("magic"))? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u16().ok_or(Short("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let bits = r.u8().ok_or(Short("precision"))?;
        let epoch = r.u32().ok_or(Short("epoch"))?;
        let config_hash = u64::from_le_bytes(r.take(8).ok_or(Short("config hash"))?.try_into().unwrap());
        let count = r.u32().ok_or(Short("parameter count"))? as usize;
        let header_end = r.pos;
        let crc = r.u32().ok_or(Short("header checksum"))?;
        if crc != crc32fast::hash(&bytes[..header_end]) {
            return Err(CheckpointError::HeaderChecksum);
        }
        if bits != T::BITS {
            return Err(CheckpointError::PrecisionMismatch { stored: bits, expected: T::BITS });
        }
        let mut params = Params::new();
        for record in 0..count {
            let start = r.pos;
            let len = r.u32().ok_or(CheckpointError::Truncated { record })? as usize;
            let body = r.take(len).ok_or(CheckpointError::Truncated { record })?;
            let crc = r.u32().ok_or(CheckpointError::Truncated { record })?;
            if crc != crc32fast::hash(&bytes[start..start + 4 + len]) {
                return Err(CheckpointError::Checksum { record });
            }
            let invalid = |reason: String| CheckpointError::InvalidRecord { record, reason };
            let short = || invalid("body shorter than its fields".into());
            let mut b = Reader { bytes: body, pos: 0 };
            let name_len = b.u16().ok_or_else(short)? as usize;
            let name = std::str::from_utf8(b.take(name_len).ok_or_else(short)?)
                .map_err(|e| invalid(e.to_string()))?
                .to_string();
            let rank = b.u8().ok_or_else(short)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(b.u32().ok_or_else(short)? as usize);
            }
            let numel: usize = dims.iter().product();
            let payload = b.take(numel * T::BYTES).ok_or_else(short)?;
            if b.pos != body.len() {
                return Err(invalid("body longer than its fields".into()));
            }
            let data = payload.chunks(T::BYTES).map(T::read_le).collect();
            let tensor = Tensor::new(&dims, data).map_err(|e| invalid(e.to_string()))?;
            params.insert(name, tensor).map_err(|e| invalid(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { epoch, config_hash, params })
    }
}

/// Value width in bits recorded in a checkpoint header, if the bytes start
/// like a checkpoint.
pub fn checkpoint_precision(bytes: &[u8]) -> Option<u8> {
    (bytes.len() > 6 && &bytes[..4] == CHECKPOINT_MAGIC).then(|| bytes[6])
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len())?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
