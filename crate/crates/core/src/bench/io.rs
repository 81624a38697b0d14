//! `.fvecs` / `.bvecs` vector files and line-delimited JSON graphs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchError, Dataset, EdgeRecord, NodeRecord};
use crate::Modality;

fn parse_vecs(bytes: &[u8], elem: usize, mut push: impl FnMut(&[u8])) -> Result<(), BenchError> {
    let mut pos = 0usize;
    while pos < bytes.len() {
        let Some(head) = bytes.get(pos..pos + 4) else {
            return Err(BenchError::MalformedRecord { offset: pos as u64 });
        };
        let d = i32::from_le_bytes(head.try_into().unwrap());
        if d <= 0 {
            return Err(BenchError::MalformedRecord { offset: pos as u64 });
        }
        let len = d as usize * elem;
        let Some(body) = bytes.get(pos + 4..pos + 4 + len) else {
            return Err(BenchError::MalformedRecord { offset: pos as u64 });
        };
        push(body);
        pos += 4 + len;
    }
    Ok(())
}

/// Reads `[i32 d][d × f32]` records.
pub fn load_fvecs(path: &Path) -> Result<Vec<Vec<f32>>, BenchError> {
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    parse_vecs(&bytes, 4, |b| {
        out.push(
            b.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    })?;
    Ok(out)
}

/// Reads `[i32 d][d × u8]` records, widening components to `f32`.
pub fn load_bvecs(path: &Path) -> Result<Vec<Vec<f32>>, BenchError> {
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    parse_vecs(&bytes, 1, |b| {
        out.push(b.iter().map(|&x| x as f32).collect())
    })?;
    Ok(out)
}

/// Reads `[i32 d][d × i32]` records, the usual ground-truth format.
pub fn load_ivecs(path: &Path) -> Result<Vec<Vec<i32>>, BenchError> {
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    parse_vecs(&bytes, 4, |b| {
        out.push(
            b.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    })?;
    Ok(out)
}

pub fn write_fvecs(path: &Path, vectors: &[Vec<f32>]) -> Result<(), BenchError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in vectors {
        w.write_all(&(v.len() as i32).to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bvecs(path: &Path, vectors: &[Vec<u8>]) -> Result<(), BenchError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in vectors {
        w.write_all(&(v.len() as i32).to_le_bytes())?;
        w.write_all(v)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Modality { name: String, dim: usize },
    Node(NodeRecord),
    Edge(EdgeRecord),
}

/// Reads a graph written by [`write_graph_jsonl`]: modality lines, then node
/// lines in id order, then edge lines.
pub fn load_graph_jsonl(path: &Path) -> Result<Dataset, BenchError> {
    let mut ds = Dataset::default();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| BenchError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Modality { name, dim } => {
                let m: Modality = name.parse().unwrap_or_else(|e| match e {});
                ds.modalities.push((m, dim));
            }
            Line::Node(n) => {
                if n.id != ds.nodes.len() as u64 {
                    return Err(BenchError::Format {
                        line: i + 1,
                        message: format!("node id {} out of sequence", n.id),
                    });
                }
                ds.nodes.push(n);
            }
            Line::Edge(e) => ds.edges.push(e),
        }
    }
    Ok(ds)
}

pub fn graph_jsonl_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for (m, dim) in &ds.modalities {
        let l = Line::Modality {
            name: m.to_string(),
            dim: *dim,
        };
        out.extend(serde_json::to_vec(&l).expect("plain data"));
        out.push(b'\n');
    }
    for n in &ds.nodes {
        out.extend(serde_json::to_vec(&Line::Node(n.clone())).expect("plain data"));
        out.push(b'\n');
    }
    for e in &ds.edges {
        out.extend(serde_json::to_vec(&Line::Edge(e.clone())).expect("plain data"));
        out.push(b'\n');
    }
    out
}

pub fn write_graph_jsonl(path: &Path, ds: &Dataset) -> Result<(), BenchError> {
    fs::write(path, graph_jsonl_bytes(ds))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fvecs");
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_fvecs(&p).unwrap(), vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.fvecs");
        fs::write(&p, b"").unwrap();
        assert!(load_fvecs(&p).unwrap().is_empty());
        assert!(load_bvecs(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.fvecs");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vs: Vec<Vec<f32>> = (0..1000)
            .map(|_| {
                (0..16)
                    .map(|_| f32::from_bits(rng.random::<u32>() & 0x3fff_ffff))
                    .collect()
            })
            .collect();
        write_fvecs(&p, &vs).unwrap();
        let back = load_fvecs(&p).unwrap();
        assert!(back
            .iter()
            .flatten()
            .zip(vs.iter().flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.len(), 1000);

        let b = dir.path().join("r.bvecs");
        let bs: Vec<Vec<u8>> = (0..50).map(|i| vec![i as u8; 8]).collect();
        write_bvecs(&b, &bs).unwrap();
        assert_eq!(load_bvecs(&b).unwrap()[7], vec![7.0; 8]);
    }

    #[test]
    fn malformed_tail_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fvecs");
        write_fvecs(&p, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 2);
        fs::write(&p, &bytes).unwrap();
        match load_fvecs(&p) {
            Err(BenchError::MalformedRecord { offset }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        fs::write(&p, [1u8, 0]).unwrap();
        assert!(matches!(
            load_fvecs(&p),
            Err(BenchError::MalformedRecord { offset: 0 })
        ));
    }
}
