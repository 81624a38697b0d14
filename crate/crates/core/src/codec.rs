//! Sectioned little-endian container shared by every on-disk snapshot.
//!
//! Layout:
//!
//! ```text
//! "HMGI" | format_version u32 | kind u32 | section_count u32
//! section_count × (tag u32 | len u64 | crc32 u32)
//! section payloads, in table order
//! crc32 u32 over every preceding byte
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HMGI";

const HEADER_LEN: usize = 16;
const ENTRY_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("format version mismatch: expected {expected}, found {found:?}")]
    FormatVersionMismatch { expected: u32, found: Option<u32> },
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum FileKind {
    Graph = 1,
    Index = 2,
    Forest = 3,
}

/// Append-only little-endian encoder.
#[derive(Debug, Default)]
pub struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Bounds-checked decoder; every short read is a `Corrupt` error.
pub struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                SnapshotError::Corrupt(format!("short read of {n} bytes at offset {}", self.pos))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, SnapshotError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, SnapshotError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, SnapshotError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| SnapshotError::Corrupt(e.to_string()))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        self.take(n)
    }

    /// Length prefix sanity check: `count` items of at least `unit` bytes
    /// must still fit in the buffer.
    pub fn count(&mut self, unit: usize) -> Result<usize, SnapshotError> {
        let n = self.u64()? as usize;
        if n.saturating_mul(unit.max(1)) > self.remaining() {
            return Err(SnapshotError::Corrupt(format!(
                "implausible item count {n}"
            )));
        }
        Ok(n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), SnapshotError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(SnapshotError::Corrupt(format!(
                "{} trailing bytes",
                self.remaining()
            )))
        }
    }
}

pub fn encode_container(kind: FileKind, version: u32, sections: &[(u32, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (tag, payload) in sections {
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    }
    for (_, payload) in sections {
        out.extend_from_slice(payload);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Validates header, trailing checksum and per-section checksums, returning
/// the sections as `(tag, payload)` in file order.
pub fn decode_container(
    bytes: &[u8],
    kind: FileKind,
    version: u32,
) -> Result<Vec<(u32, &[u8])>, SnapshotError> {
    if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != MAGIC {
        return Err(SnapshotError::FormatVersionMismatch {
            expected: version,
            found: None,
        });
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(SnapshotError::FormatVersionMismatch {
            expected: version,
            found: Some(found),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(SnapshotError::ChecksumMismatch("file trailer".into()));
    }
    let found_kind = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found_kind != kind as u32 {
        return Err(SnapshotError::Corrupt(format!(
            "file kind {found_kind}, expected {}",
            kind as u32
        )));
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let table_end = count
        .checked_mul(ENTRY_LEN)
        .and_then(|t| t.checked_add(HEADER_LEN))
        .filter(|&e| e <= body.len())
        .ok_or_else(|| SnapshotError::Corrupt("section table overruns file".into()))?;
    let mut table = Dec::new(&body[HEADER_LEN..table_end]);
    let mut offset = table_end;
    let mut sections = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = table.u32()?;
        let len = table.u64()? as usize;
        let crc = table.u32()?;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| SnapshotError::Corrupt(format!("section {tag} overruns file")))?;
        let payload = &body[offset..end];
        if crc32fast::hash(payload) != crc {
            return Err(SnapshotError::ChecksumMismatch(format!("section {tag}")));
        }
        sections.push((tag, payload));
        offset = end;
    }
    if offset != body.len() {
        return Err(SnapshotError::Corrupt(
            "unaccounted bytes after sections".into(),
        ));
    }
    Ok(sections)
}

pub fn section<'a>(sections: &[(u32, &'a [u8])], tag: u32) -> Result<&'a [u8], SnapshotError> {
    sections
        .iter()
        .find(|(t, _)| *t == tag)
        .map(|(_, p)| *p)
        .ok_or_else(|| SnapshotError::Corrupt(format!("missing section {tag}")))
}

/// JSON text followed by a line holding its crc32 in hex.
pub fn encode_checked_json(json: &str) -> Vec<u8> {
    format!("{json}\n{:08x}\n", crc32fast::hash(json.as_bytes())).into_bytes()
}

pub fn decode_checked_json(bytes: &[u8]) -> Result<&str, SnapshotError> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| SnapshotError::Corrupt("not utf-8".into()))?;
    let body = text
        .strip_suffix('\n')
        .ok_or_else(|| SnapshotError::Corrupt("missing checksum line".into()))?;
    let (json, crc) = body
        .rsplit_once('\n')
        .ok_or_else(|| SnapshotError::Corrupt("missing checksum line".into()))?;
    let stored = u32::from_str_radix(crc, 16)
        .ok()
        .filter(|_| crc.len() == 8)
        .ok_or_else(|| SnapshotError::Corrupt("malformed checksum line".into()))?;
    if crc32fast::hash(json.as_bytes()) != stored {
        return Err(SnapshotError::ChecksumMismatch("json body".into()));
    }
    Ok(json)
}

/// Writes through a sibling temp file so readers never observe a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SnapshotError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
