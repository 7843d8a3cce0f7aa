//! Embedding index files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "AVSE"
//!      4     4  version (u32, = 1)
//!      8     1  kind (0 = image, 1 = text)
//!      9     8  count (u64)
//!     17     4  n_views (u32, 1 for text)
//!     21     4  d1 (u32)
//!     25     8  FNV-1a 64 checksum of the payload
//!     33     -  payload: count * n_views * d1 f32, row-major, little-endian
//! ```

use std::path::Path;

use super::codec::{fnv1a64, format_err, read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{AvseError, FormatError, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"AVSE";
pub const INDEX_VERSION: u32 = 1;
pub const INDEX_HEADER_LEN: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Image,
    Text,
}

impl IndexKind {
    fn code(self) -> u8 {
        match self {
            IndexKind::Image => 0,
            IndexKind::Text => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub kind: IndexKind,
    pub count: u64,
    pub n_views: u32,
    pub d1: u32,
    pub checksum: u64,
}

/// Row `i` is the embedding of item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub kind: IndexKind,
    pub n_views: u32,
    pub d1: u32,
    data: Vec<f32>,
}

impl EmbeddingIndex {
    pub fn new(kind: IndexKind, n_views: u32, d1: u32, data: Vec<f32>) -> Result<Self> {
        if kind == IndexKind::Text && n_views != 1 {
            return Err(AvseError::domain("text indexes have exactly one view"));
        }
        let width = n_views as usize * d1 as usize;
        if width == 0 || data.len() % width != 0 {
            return Err(AvseError::domain(format!(
                "{} values do not form rows of width {width}",
                data.len()
            )));
        }
        Ok(EmbeddingIndex { kind, n_views, d1, data })
    }

    /// Narrows `f64` rows to `f32`.
    pub fn from_rows<R: AsRef<[f64]>>(kind: IndexKind, n_views: u32, d1: u32, rows: &[R]) -> Result<Self> {
        let width = n_views as usize * d1 as usize;
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.as_ref().len() != width {
                return Err(AvseError::domain(format!(
                    "row of length {} in an index of width {width}",
                    r.as_ref().len()
                )));
            }
            data.extend(r.as_ref().iter().map(|&x| x as f32));
        }
        EmbeddingIndex::new(kind, n_views, d1, data)
    }

    pub fn width(&self) -> usize {
        self.n_views as usize * self.d1 as usize
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows widened to `f64` for scoring.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.row(i).iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn header(&self) -> EmbeddingFileHeader {
        EmbeddingFileHeader {
            kind: self.kind,
            count: self.len() as u64,
            n_views: self.n_views,
            d1: self.d1,
            checksum: fnv1a64(&self.payload()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut w = ByteWriter::default();
        w.bytes(&INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.u8(self.kind.code());
        w.u64(self.len() as u64);
        w.u32(self.n_views);
        w.u32(self.d1);
        w.u64(fnv1a64(&payload));
        w.bytes(&payload);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes, 0);
        let magic = r.magic()?;
        if magic != INDEX_MAGIC {
            return Err(FormatError::BadMagic {
                expected: INDEX_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(FormatError::VersionMismatch {
                expected: INDEX_VERSION,
                found: version,
            });
        }
        let kind = match r.u8()? {
            0 => IndexKind::Image,
            1 => IndexKind::Text,
            other => return Err(FormatError::InvalidField { offset: 8, reason: format!("kind byte {other}") }),
        };
        let count = r.u64()?;
        let n_views = r.u32()?;
        let d1 = r.u32()?;
        let checksum = r.u64()?;
        if n_views == 0 || d1 == 0 {
            return Err(FormatError::InvalidField {
                offset: 17,
                reason: format!("n_views={n_views}, d1={d1} must be positive"),
            });
        }
        if kind == IndexKind::Text && n_views != 1 {
            return Err(FormatError::InvalidField {
                offset: 17,
                reason: format!("text index with {n_views} views"),
            });
        }
        let payload_len = count
            .checked_mul(u64::from(n_views) * u64::from(d1) * 4)
            .ok_or_else(|| r.invalid("payload length overflows"))?;
        let have = r.remaining() as u64;
        if have < payload_len {
            return Err(FormatError::Truncated {
                offset: r.offset() + have,
                needed: payload_len - have,
            });
        }
        let payload = r.take(payload_len as usize)?;
        r.finish()?;
        let actual = fnv1a64(payload);
        if actual != checksum {
            return Err(FormatError::ChecksumMismatch {
                expected: checksum,
                actual,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(EmbeddingIndex { kind, n_views, d1, data })
    }
}

pub fn write_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    write_atomic(path, &index.to_bytes())
}

pub fn read_index(path: &Path) -> Result<EmbeddingIndex> {
    let bytes = read_file(path)?;
    EmbeddingIndex::from_bytes(&bytes).map_err(|e| format_err(path, e))
}
