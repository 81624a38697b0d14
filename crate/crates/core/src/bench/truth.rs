//! Exact cosine top-k by exhaustive scan, with a content-addressed disk cache.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::BenchError;
use crate::NodeId;

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Exact top-`k` ids per query by cosine distance in f64, ties to the smaller
/// id. Zero vectors sit at distance 1 from everything.
pub fn ground_truth(base: &[(NodeId, &[f32])], queries: &[Vec<f32>], k: usize) -> Vec<Vec<NodeId>> {
    let norms: Vec<f64> = base.iter().map(|(_, v)| norm(v)).collect();
    queries
        .par_iter()
        .map(|q| {
            let qn = norm(q);
            let mut scored: Vec<(f64, NodeId)> = base
                .iter()
                .zip(&norms)
                .map(|((id, v), &vn)| {
                    let d = if qn == 0.0 || vn == 0.0 {
                        1.0
                    } else {
                        let dot: f64 = q.iter().zip(*v).map(|(&a, &b)| a as f64 * b as f64).sum();
                        1.0 - dot / (qn * vn)
                    };
                    (d, *id)
                })
                .collect();
            let k = k.min(scored.len());
            let cmp =
                |a: &(f64, NodeId), b: &(f64, NodeId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k > 0 && k < scored.len() {
                scored.select_nth_unstable_by(k - 1, cmp);
            }
            scored.truncate(k);
            scored.sort_by(cmp);
            scored.into_iter().map(|(_, id)| id).collect()
        })
        .collect()
}

fn cache_key(base: &[(NodeId, &[f32])], queries: &[Vec<f32>], k: usize) -> String {
    let mut h = Sha256::new();
    h.update(b"gt-v1");
    h.update((k as u64).to_le_bytes());
    h.update((base.len() as u64).to_le_bytes());
    for (id, v) in base {
        h.update(id.to_le_bytes());
        h.update((v.len() as u64).to_le_bytes());
        for x in *v {
            h.update(x.to_le_bytes());
        }
    }
    h.update((queries.len() as u64).to_le_bytes());
    for q in queries {
        h.update((q.len() as u64).to_le_bytes());
        for x in q {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(lists: &[Vec<NodeId>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((lists.len() as u64).to_le_bytes());
    for l in lists {
        out.extend((l.len() as u64).to_le_bytes());
        for id in l {
            out.extend(id.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Option<Vec<Vec<NodeId>>> {
    let mut words = bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()));
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    let n = words.next()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = words.next()? as usize;
        let mut l = Vec::with_capacity(len.min(1 << 20));
        for _ in 0..len {
            l.push(words.next()?);
        }
        out.push(l);
    }
    words.next().is_none().then_some(out)
}

/// [`ground_truth`] memoized under `dir`, keyed by a hash of the data,
/// the queries and `k`. Returns the lists and whether the cache was hit.
/// Unreadable cache files are recomputed and overwritten.
pub fn ground_truth_cached(
    dir: &Path,
    base: &[(NodeId, &[f32])],
    queries: &[Vec<f32>],
    k: usize,
) -> Result<(Vec<Vec<NodeId>>, bool), BenchError> {
    let path = dir.join(format!("gt-{}.bin", cache_key(base, queries, k)));
    if let Ok(bytes) = fs::read(&path) {
        if let Some(lists) = decode(&bytes) {
            return Ok((lists, true));
        }
    }
    let lists = ground_truth(base, queries, k);
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(&lists))?;
    fs::rename(&tmp, &path)?;
    Ok((lists, false))
}
