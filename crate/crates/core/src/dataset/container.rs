//! FZDS: a single-file paired dataset.
//!
//! ```text
//! header  "FZDS" | u16 version | u8 precision bits | u16 class count
//!         | per class: u16 len, utf-8 name
//!         | u32 sample count | u32 C | u32 H | u32 W
//!         | u32 crc32 of all preceding header bytes
//! record  u32 body length | body | u32 crc32 of length and body
//! body    u32 label | u8 split (0 train, 1 test)
//!         | u16 len, image id | u16 len, audio id
//!         | C*H*W image values | C*H*W spectrogram values
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use thiserror::Error;

use super::{Dataset, DatasetError, DatasetManifest, PairedSample, Split};
use crate::autograd::{Scalar, Tensor};

pub const CONTAINER_MAGIC: &[u8; 4] = b"FZDS";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("not an FZDS container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("container holds {found}-bit values, expected {expected}-bit")]
    PrecisionMismatch { expected: u8, found: u8 },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("record {record}: truncated")]
    Truncated { record: usize },
    #[error("record {record}: checksum mismatch")]
    Checksum { record: usize },
    #[error("record {record}: {reason}")]
    InvalidRecord { record: usize, reason: String },
    #[error("{0} unexpected bytes after the last record")]
    TrailingBytes(usize),
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
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
    fn str(&mut self) -> Option<Result<String, std::string::FromUtf8Error>> {
        let n = self.u16()? as usize;
        self.take(n).map(|b| String::from_utf8(b.to_vec()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    assert!(b.len() <= u16::MAX as usize, "string too long for container");
    out.extend_from_slice(&(b.len() as u16).to_le_bytes());
    out.extend_from_slice(b);
}

/// Serializes a dataset. Samples must share one `[C, H, W]` shape.
pub fn encode_container<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<u8>, DatasetError> {
    ds.validate()?;
    let [c, h, w] = ds.sample_shape().unwrap_or([0, 0, 0]);
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.push(T::BITS);
    out.extend_from_slice(&(ds.classes.len() as u16).to_le_bytes());
    for name in &ds.classes {
        put_str(&mut out, name);
    }
    for v in [ds.len(), c, h, w] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    let mut body = Vec::new();
    for s in &ds.samples {
        body.clear();
        body.extend_from_slice(&(s.label as u32).to_le_bytes());
        body.push(match s.split {
            Split::Train => 0,
            Split::Test => 1,
        });
        put_str(&mut body, &s.image_id);
        put_str(&mut body, &s.audio_id);
        for v in s.image.data().iter().chain(s.spectrogram.data()) {
            v.write_le(&mut body);
        }
        let start = out.len();
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>, ContainerError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4) != Some(CONTAINER_MAGIC.as_slice()) {
        return Err(ContainerError::BadMagic);
    }
    let version = cur.u16().ok_or(ContainerError::TruncatedHeader)?;
    if version != CONTAINER_VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let bits = cur.u8().ok_or(ContainerError::TruncatedHeader)?;
    let n_classes = cur.u16().ok_or(ContainerError::TruncatedHeader)?;
    let mut classes = Vec::with_capacity(n_classes as usize);
    for _ in 0..n_classes {
        let name = cur
            .str()
            .ok_or(ContainerError::TruncatedHeader)?
            .map_err(|_| ContainerError::InvalidHeader("class name is not utf-8".into()))?;
        classes.push(name);
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = cur.u32().ok_or(ContainerError::TruncatedHeader)? as usize;
    }
    let header_end = cur.pos;
    let crc = cur.u32().ok_or(ContainerError::TruncatedHeader)?;
    if crc != crc32fast::hash(&bytes[..header_end]) {
        return Err(ContainerError::HeaderChecksum);
    }
    // checked only after the checksum so a flipped precision byte reads as corruption
    if bits != T::BITS {
        return Err(ContainerError::PrecisionMismatch {
            expected: T::BITS,
            found: bits,
        });
    }
    let [count, c, h, w] = dims;
    let per = c * h * w;
    let mut ds = Dataset::new(classes);
    for record in 0..count {
        let start = cur.pos;
        let len = cur.u32().ok_or(ContainerError::Truncated { record })? as usize;
        let body = cur.take(len).ok_or(ContainerError::Truncated { record })?;
        let crc = cur.u32().ok_or(ContainerError::Truncated { record })?;
        if crc != crc32fast::hash(&bytes[start..start + 4 + len]) {
            return Err(ContainerError::Checksum { record });
        }
        let invalid = |reason: &str| ContainerError::InvalidRecord {
            record,
            reason: reason.into(),
        };
        let mut b = Cursor { buf: body, pos: 0 };
        let label = b.u32().ok_or_else(|| invalid("short body"))? as usize;
        if label >= ds.classes.len() {
            return Err(invalid("label outside class table"));
        }
        let split = match b.u8() {
            Some(0) => Split::Train,
            Some(1) => Split::Test,
            _ => return Err(invalid("bad split tag")),
        };
        let image_id = b
            .str()
            .ok_or_else(|| invalid("short body"))?
            .map_err(|_| invalid("id is not utf-8"))?;
        let audio_id = b
            .str()
            .ok_or_else(|| invalid("short body"))?
            .map_err(|_| invalid("id is not utf-8"))?;
        let payload = b.take(2 * per * T::BYTES).ok_or_else(|| invalid("short payload"))?;
        if b.pos != body.len() {
            return Err(invalid("body longer than its payload"));
        }
        let values: Vec<T> = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        let (img, spec) = values.split_at(per);
        ds.samples.push(PairedSample {
            image: Tensor::new(&[c, h, w], img.to_vec()).map_err(|e| invalid(&e.to_string()))?,
            spectrogram: Tensor::new(&[c, h, w], spec.to_vec()).map_err(|e| invalid(&e.to_string()))?,
            label,
            image_id,
            audio_id,
            split,
        });
    }
    if cur.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(ds)
}

/// Value width in bits recorded in a container header, if the bytes start
/// like a container.
pub fn container_precision(bytes: &[u8]) -> Option<u8> {
    (bytes.len() > 6 && &bytes[..4] == CONTAINER_MAGIC).then(|| bytes[6])
}

pub fn save_container<T: Scalar>(path: impl AsRef<Path>, ds: &Dataset<T>) -> Result<(), DatasetError> {
    let bytes = encode_container(ds)?;
    std::fs::write(path.as_ref(), bytes).map_err(|source| DatasetError::Io {
        path: path.as_ref().to_path_buf(),
        source,
    })
}

pub fn load_container<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>, DatasetError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|source| DatasetError::Io {
        path: path.as_ref().to_path_buf(),
        source,
    })?;
    Ok(decode_container(&bytes)?)
}

/// Reads every image a manifest names and writes them as one container.
pub fn pack_container<T: Scalar>(
    manifest: &DatasetManifest,
    base: &Path,
    hw: usize,
    out: &Path,
) -> Result<Dataset<T>, DatasetError> {
    let ds = super::load_manifest_samples::<T>(manifest, base, hw)?;
    save_container(out, &ds)?;
    Ok(ds)
}
