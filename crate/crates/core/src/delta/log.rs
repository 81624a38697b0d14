//! Append-only delta log. Each record is framed as `len | crc32 | payload`;
//! on open, a torn or corrupt tail is dropped and the file truncated to the
//! last intact record.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::DeltaOp;
use crate::codec::{Dec, Enc, SnapshotError};
use crate::NodeId;

const MAGIC: &[u8; 4] = b"HMGD";
pub const LOG_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRecord {
    pub version: u64,
    pub id: NodeId,
    pub op: DeltaOp,
    pub partition: u16,
    pub embedding: Option<Vec<f32>>,
}

impl LoggedRecord {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u64(self.version);
        e.u64(self.id);
        e.u8(self.op as u8);
        e.u16(self.partition);
        match &self.embedding {
            Some(v) => {
                e.u32(v.len() as u32);
                for &x in v {
                    e.f32(x);
                }
            }
            None => e.u32(u32::MAX),
        }
        e.finish()
    }

    fn decode(buf: &[u8]) -> Result<Self, SnapshotError> {
        let mut d = Dec::new(buf);
        let version = d.u64()?;
        let id = d.u64()?;
        let op = DeltaOp::from_u8(d.u8()?).ok_or_else(|| SnapshotError::Corrupt("op".into()))?;
        let partition = d.u16()?;
        let embedding = match d.u32()? {
            u32::MAX => None,
            n => Some((0..n).map(|_| d.f32()).collect::<Result<Vec<_>, _>>()?),
        };
        d.expect_end()?;
        Ok(Self {
            version,
            id,
            op,
            partition,
            embedding,
        })
    }
}

#[derive(Debug)]
pub struct DeltaLog {
    file: File,
    path: PathBuf,
}

fn frame(rec: &LoggedRecord) -> Vec<u8> {
    let payload = rec.encode();
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn header() -> [u8; 8] {
    let mut h = [0u8; 8];
    h[..4].copy_from_slice(MAGIC);
    h[4..].copy_from_slice(&LOG_FORMAT_VERSION.to_le_bytes());
    h
}

/// Parses intact records; returns them with the byte length they cover.
fn parse(bytes: &[u8]) -> Result<(Vec<LoggedRecord>, usize), SnapshotError> {
    if bytes.len() < HEADER_LEN as usize || &bytes[..4] != MAGIC {
        return Err(SnapshotError::FormatVersionMismatch {
            expected: LOG_FORMAT_VERSION,
            found: None,
        });
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != LOG_FORMAT_VERSION {
        return Err(SnapshotError::FormatVersionMismatch {
            expected: LOG_FORMAT_VERSION,
            found: Some(found),
        });
    }
    let mut pos = HEADER_LEN as usize;
    let mut out = Vec::new();
    while pos + 8 <= bytes.len() {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let Some(payload) = bytes.get(pos + 8..pos + 8 + len) else {
            break;
        };
        if crc32fast::hash(payload) != crc {
            break;
        }
        match LoggedRecord::decode(payload) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
        pos += 8 + len;
    }
    Ok((out, pos))
}

impl DeltaLog {
    /// Opens or creates a log, returning the intact records it holds.
    pub fn open(path: &Path) -> Result<(Self, Vec<LoggedRecord>), SnapshotError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let records = if bytes.is_empty() {
            file.write_all(&header())?;
            Vec::new()
        } else {
            let (records, good) = parse(&bytes)?;
            if good < bytes.len() {
                file.set_len(good as u64)?;
            }
            records
        };
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                file,
                path: path.to_path_buf(),
            },
            records,
        ))
    }

    /// Records of an existing log, without modifying the file. Unlike
    /// [`DeltaLog::open`], any unparsable tail is an error.
    pub fn read(path: &Path) -> Result<Vec<LoggedRecord>, SnapshotError> {
        let bytes = std::fs::read(path)?;
        let (records, good) = parse(&bytes)?;
        if good < bytes.len() {
            return Err(SnapshotError::Corrupt(format!(
                "delta log damaged at offset {good}"
            )));
        }
        Ok(records)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, rec: &LoggedRecord) -> Result<(), SnapshotError> {
        self.file.write_all(&frame(rec))?;
        Ok(())
    }

    pub fn sync(&self) -> Result<(), SnapshotError> {
        self.file.sync_data()?;
        Ok(())
    }

    /// Atomically replaces the log with exactly `records`.
    pub fn rewrite(&mut self, records: &[LoggedRecord]) -> Result<(), SnapshotError> {
        let mut bytes = header().to_vec();
        for r in records {
            bytes.extend_from_slice(&frame(r));
        }
        crate::codec::write_atomic(&self.path, &bytes)?;
        let mut file = OpenOptions::new().read(true).write(true).open(&self.path)?;
        file.seek(SeekFrom::End(0))?;
        self.file = file;
        Ok(())
    }
}
