//! Little-endian byte encoding shared by every on-disk format.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{AvseError, FormatError, Result};
use crate::linalg::Matrix;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    /// `u64` length followed by the bytes.
    pub fn blob(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.bytes(b);
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(v.len() * 8);
        for &x in v {
            self.f64(x);
        }
    }

    /// `u32` rows, `u32` cols, then row-major entries.
    pub fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        self.f64s(m.as_slice());
    }
}

#[derive(Debug)]
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    /// File offset of `data[0]`, for error messages.
    base: u64,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8], base: u64) -> Self {
        ByteReader { data, pos: 0, base }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                offset: self.offset(),
                needed: (n - self.remaining()) as u64,
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn u128(&mut self) -> std::result::Result<u128, FormatError> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn magic(&mut self) -> std::result::Result<[u8; 4], FormatError> {
        self.array()
    }

    /// Reads a `u64` count and checks it against the bytes actually left, so a
    /// corrupt length never triggers a huge allocation.
    pub fn len(&mut self, elem_size: usize) -> std::result::Result<usize, FormatError> {
        let at = self.offset();
        let n = self.u64()?;
        let needed = n.saturating_mul(elem_size as u64);
        if needed > self.remaining() as u64 {
            return Err(FormatError::Truncated {
                offset: at,
                needed: needed - self.remaining() as u64,
            });
        }
        Ok(n as usize)
    }

    pub fn blob(&mut self) -> std::result::Result<&'a [u8], FormatError> {
        let n = self.len(1)?;
        self.take(n)
    }

    pub fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.invalid("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn matrix(&mut self) -> std::result::Result<Matrix, FormatError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self.f64s(rows * cols)?;
        Ok(Matrix::from_vec(rows, cols, data).expect("length matches"))
    }

    pub fn invalid(&self, reason: impl Into<String>) -> FormatError {
        FormatError::InvalidField {
            offset: self.offset(),
            reason: reason.into(),
        }
    }

    pub fn finish(&self) -> std::result::Result<(), FormatError> {
        if self.remaining() > 0 {
            return Err(FormatError::TrailingBytes {
                offset: self.offset(),
                extra: self.remaining() as u64,
            });
        }
        Ok(())
    }
}

/// Length of the generic container header: magic, version, payload length, checksum.
pub(crate) const CONTAINER_HEADER: usize = 4 + 4 + 8 + 8;

/// Wraps a payload in `magic | version | len | fnv1a64(payload)`.
pub(crate) fn container(magic: [u8; 4], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&magic);
    w.u32(version);
    w.u64(payload.len() as u64);
    w.u64(fnv1a64(payload));
    w.bytes(payload);
    w.buf
}

/// Validates a container and returns a reader over its payload.
pub(crate) fn open_container(
    bytes: &[u8],
    magic: [u8; 4],
    version: u32,
) -> std::result::Result<ByteReader<'_>, FormatError> {
    let mut r = ByteReader::new(bytes, 0);
    let found = r.magic()?;
    if found != magic {
        return Err(FormatError::BadMagic { expected: magic, found });
    }
    let v = r.u32()?;
    if v != version {
        return Err(FormatError::VersionMismatch {
            expected: version,
            found: v,
        });
    }
    let len = r.u64()?;
    let checksum = r.u64()?;
    let have = r.remaining() as u64;
    if have < len {
        return Err(FormatError::Truncated {
            offset: r.offset() + have,
            needed: len - have,
        });
    }
    if have > len {
        return Err(FormatError::TrailingBytes {
            offset: r.offset() + len,
            extra: have - len,
        });
    }
    let payload = r.take(len as usize)?;
    let actual = fnv1a64(payload);
    if actual != checksum {
        return Err(FormatError::ChecksumMismatch {
            expected: checksum,
            actual,
        });
    }
    Ok(ByteReader::new(payload, CONTAINER_HEADER as u64))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| AvseError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| AvseError::io(&tmp, e))?;
    f.sync_all().map_err(|e| AvseError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| AvseError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AvseError::io(path, e))
}

pub(crate) fn format_err(path: &Path, source: FormatError) -> AvseError {
    AvseError::Format {
        path: path.to_path_buf(),
        source,
    }
}
