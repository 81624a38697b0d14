//! Hierarchical navigable small-world graph over cosine distance.
//!
//! One `HnswIndex` serves one partition. Vectors live in slot order; node ids
//! map to slots through `slot_of`, which only holds live ids. Removal
//! tombstones a slot but keeps it as a routing node until the index is
//! compacted.

mod persist;
mod store;

use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::SnapshotError;
use crate::distance;
use crate::quant::Bits;
use crate::{NodeId, PartitionId};

use store::VectorStore;

const MAX_LEVEL: usize = 15;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("id {0} is already live in the index")]
    DuplicateId(NodeId),
    #[error("id {0} is not live in the index")]
    UnknownId(NodeId),
    #[error("zero or non-finite vector")]
    ZeroVector,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max neighbors per node on layers above 0; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Level-assignment multiplier, `1 / ln(m)` by default.
    pub level_mult: f64,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::new(32, 200, 200)
    }
}

impl HnswParams {
    pub fn new(m: usize, ef_construction: usize, ef_search: usize) -> Self {
        Self {
            m,
            ef_construction,
            ef_search,
            level_mult: 1.0 / (m.max(2) as f64).ln(),
            seed: 0x5eed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParams(format!("M = {} < 2", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(IndexError::InvalidParams(format!(
                "ef_construction = {} < M = {}",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search < 1 {
            return Err(IndexError::InvalidParams("ef_search = 0".into()));
        }
        if !(self.level_mult.is_finite() && self.level_mult > 0.0) {
            return Err(IndexError::InvalidParams(
                "level multiplier must be positive".into(),
            ));
        }
        Ok(())
    }

    fn max_degree(&self, level: usize) -> usize {
        if level == 0 {
            self.m * 2
        } else {
            self.m
        }
    }
}

/// One nearest-neighbor result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: NodeId,
    /// Cosine distance in `[0, 2]`.
    pub distance: f32,
    pub partition: PartitionId,
}

/// Orders hits ascending by distance, ties by id.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub distance_evals: usize,
    pub visited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    dist: f32,
    slot: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.slot.cmp(&other.slot))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Generation-stamped visited set reused across searches on one thread.
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn insert(&mut self, slot: u32) -> bool {
        let m = &mut self.marks[slot as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

thread_local! {
    static VISITED: RefCell<Visited> = const { RefCell::new(Visited { marks: Vec::new(), epoch: 0 }) };
}

struct Query<'a> {
    unit: &'a [f32],
    scratch: Vec<f32>,
    evals: usize,
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    params: HnswParams,
    partition: PartitionId,
    store: VectorStore,
    ids: Vec<NodeId>,
    slot_of: HashMap<NodeId, u32>,
    levels: Vec<u8>,
    /// `links[slot][level]` for `level <= levels[slot]`.
    links: Vec<Vec<Vec<u32>>>,
    tombstones: Vec<u64>,
    entry: Option<u32>,
    max_level: usize,
}

impl PartialEq for HnswIndex {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.partition == other.partition
            && self.store == other.store
            && self.ids == other.ids
            && self.slot_of == other.slot_of
            && self.levels == other.levels
            && self.links == other.links
            && self.tombstones == other.tombstones
            && self.entry == other.entry
            && self.max_level == other.max_level
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams, bits: Bits) -> Result<Self, IndexError> {
        params.validate()?;
        if dim == 0 {
            return Err(IndexError::InvalidParams("dimension 0".into()));
        }
        Ok(Self {
            params,
            partition: PartitionId::default(),
            store: VectorStore::new(dim, bits),
            ids: Vec::new(),
            slot_of: HashMap::new(),
            levels: Vec::new(),
            links: Vec::new(),
            tombstones: Vec::new(),
            entry: None,
            max_level: 0,
        })
    }

    /// Builds by inserting `vectors` in order.
    pub fn build(
        dim: usize,
        vectors: &[(NodeId, Vec<f32>)],
        params: HnswParams,
        bits: Bits,
    ) -> Result<Self, IndexError> {
        let mut index = Self::new(dim, params, bits)?;
        for (id, v) in vectors {
            index.insert(*id, v)?;
        }
        Ok(index)
    }

    pub fn with_partition(mut self, partition: PartitionId) -> Self {
        self.partition = partition;
        self
    }

    pub fn set_partition(&mut self, partition: PartitionId) {
        self.partition = partition;
    }

    pub fn partition(&self) -> PartitionId {
        self.partition
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    pub fn bits(&self) -> Bits {
        self.store.bits
    }

    /// Live vector count.
    pub fn len(&self) -> usize {
        self.slot_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_of.is_empty()
    }

    /// Total slots, including tombstoned ones.
    pub fn slots(&self) -> usize {
        self.ids.len()
    }

    pub fn tombstone_count(&self) -> usize {
        self.ids.len() - self.slot_of.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.slot_of.contains_key(&id)
    }

    pub fn entry_point(&self) -> Option<NodeId> {
        self.entry.map(|s| self.ids[s as usize])
    }

    /// Live ids in slot order.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids
            .iter()
            .enumerate()
            .filter(|(s, _)| !self.is_deleted(*s as u32))
            .map(|(_, id)| *id)
    }

    /// Stored vector for a live id, unit-normalized as the kernels see it.
    pub fn vector(&self, id: NodeId) -> Option<Vec<f32>> {
        self.slot_of
            .get(&id)
            .map(|&s| self.store.unit_vector(s as usize))
    }

    /// Embedding storage: `(payload bytes, descriptor bytes)`.
    pub fn embedding_bytes(&self) -> (usize, usize) {
        (self.store.payload_bytes(), self.store.descriptor_bytes())
    }

    /// Bytes held by adjacency lists and bookkeeping.
    pub fn graph_bytes(&self) -> usize {
        let links: usize = self
            .links
            .iter()
            .flat_map(|per_level| per_level.iter())
            .map(|l| l.len() * 4)
            .sum();
        links + self.ids.len() * 9 + self.tombstones.len() * 8
    }

    #[inline]
    fn is_deleted(&self, slot: u32) -> bool {
        let s = slot as usize;
        self.tombstones
            .get(s / 64)
            .is_some_and(|w| (w >> (s % 64)) & 1 == 1)
    }

    fn set_deleted(&mut self, slot: u32) {
        let s = slot as usize;
        if self.tombstones.len() <= s / 64 {
            self.tombstones.resize(s / 64 + 1, 0);
        }
        self.tombstones[s / 64] |= 1 << (s % 64);
    }

    fn level_for(&self, slot: usize) -> usize {
        let h = splitmix64(self.params.seed ^ splitmix64(slot as u64));
        // 53 random bits mapped into (0, 1].
        let u = ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        ((-u.ln() * self.params.level_mult).floor() as usize).min(MAX_LEVEL)
    }

    fn check_dim(&self, v: &[f32]) -> Result<(), IndexError> {
        if v.len() != self.store.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.store.dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn query_dist(&self, q: &mut Query<'_>, slot: u32) -> f32 {
        q.evals += 1;
        let s = slot as usize;
        let norm = self.store.norms[s];
        let v = self.store.vector(s, &mut q.scratch);
        distance::cosine_distance_unit(q.unit, v, norm)
    }

    fn search_layer(
        &self,
        q: &mut Query<'_>,
        entries: &[Cand],
        ef: usize,
        level: usize,
        eligible: &dyn Fn(u32) -> bool,
    ) -> Vec<Cand> {
        VISITED.with(|cell| {
            let mut visited = cell.borrow_mut();
            visited.reset(self.ids.len());
            let mut candidates: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
            let mut results: BinaryHeap<Cand> = BinaryHeap::new();
            for &ep in entries {
                if visited.insert(ep.slot) {
                    candidates.push(Reverse(ep));
                    if eligible(ep.slot) {
                        results.push(ep);
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
            while let Some(Reverse(c)) = candidates.pop() {
                // Only stop once the result list is full, so that ef >= live
                // count degenerates into an exhaustive walk.
                if results.len() >= ef && c.dist > results.peek().map_or(f32::INFINITY, |w| w.dist)
                {
                    break;
                }
                let Some(neighbors) = self.links[c.slot as usize].get(level) else {
                    continue;
                };
                for &n in neighbors {
                    if !visited.insert(n) {
                        continue;
                    }
                    let d = self.query_dist(q, n);
                    let worst = results.peek().map_or(f32::INFINITY, |w| w.dist);
                    if results.len() < ef || d < worst {
                        let cand = Cand { dist: d, slot: n };
                        candidates.push(Reverse(cand));
                        if eligible(n) {
                            results.push(cand);
                            if results.len() > ef {
                                results.pop();
                            }
                        }
                    }
                }
            }
            let mut out = results.into_vec();
            out.sort();
            out
        })
    }

    /// Greedy descent from the entry point down to `target_level + 1`.
    fn descend(&self, q: &mut Query<'_>, target_level: usize) -> Option<Cand> {
        let entry = self.entry?;
        let mut cur = Cand {
            dist: self.query_dist(q, entry),
            slot: entry,
        };
        let all = |_: u32| true;
        let mut level = self.max_level;
        while level > target_level {
            let found = self.search_layer(q, &[cur], 1, level, &all);
            if let Some(&best) = found.first() {
                cur = best;
            }
            level -= 1;
        }
        Some(cur)
    }

    /// Diversity-preferring neighbor selection with pruned connections kept
    /// as fill. `candidates` must be sorted ascending by distance to the base.
    fn select_neighbors(&self, candidates: &[Cand], m: usize) -> Vec<u32> {
        let dim = self.store.dim;
        let mut selected: Vec<u32> = Vec::with_capacity(m);
        let mut selected_vecs: Vec<f32> = Vec::with_capacity(m * dim);
        let mut pruned: Vec<u32> = Vec::new();
        let mut scratch = vec![0.0; dim];
        for c in candidates {
            if selected.len() >= m {
                break;
            }
            let s = c.slot as usize;
            let norm = self.store.norms[s];
            let v = self.store.vector(s, &mut scratch);
            let diverse = selected_vecs
                .chunks_exact(dim)
                .all(|r| distance::cosine_distance_unit(r, v, norm) >= c.dist);
            if diverse {
                selected.push(c.slot);
                let inv = if norm > 0.0 { 1.0 / norm } else { 1.0 };
                selected_vecs.extend(v.iter().map(|x| x * inv));
            } else {
                pruned.push(c.slot);
            }
        }
        for p in pruned {
            if selected.len() >= m {
                break;
            }
            selected.push(p);
        }
        selected
    }

    /// Re-selects `slot`'s neighbor list at `level` after an overflow.
    fn shrink(&mut self, slot: u32, level: usize) {
        let max = self.params.max_degree(level);
        let base = self.store.unit_vector(slot as usize);
        let mut q = Query {
            unit: &base,
            scratch: vec![0.0; self.store.dim],
            evals: 0,
        };
        let mut cands: Vec<Cand> = self.links[slot as usize][level]
            .iter()
            .map(|&n| Cand {
                dist: self.query_dist(&mut q, n),
                slot: n,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, max);
        self.links[slot as usize][level] = kept;
    }

    /// Inserts a vector. The vector is L2-normalized before storage.
    pub fn insert(&mut self, id: NodeId, v: &[f32]) -> Result<(), IndexError> {
        self.check_dim(v)?;
        if self.slot_of.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let unit = distance::normalized(v).ok_or(IndexError::ZeroVector)?;
        let slot = self.ids.len() as u32;
        self.store.push(&unit);
        self.ids.push(id);
        self.slot_of.insert(id, slot);
        let level = self.level_for(slot as usize);
        self.levels.push(level as u8);
        self.links.push(vec![Vec::new(); level + 1]);

        if self.entry.is_none() {
            self.entry = Some(slot);
            self.max_level = level;
        } else {
            self.link_new(slot, level);
        }
        Ok(())
    }

    /// Tombstones a live id.
    pub fn remove(&mut self, id: NodeId) -> Result<(), IndexError> {
        let slot = self.slot_of.remove(&id).ok_or(IndexError::UnknownId(id))?;
        self.set_deleted(slot);
        if self.entry == Some(slot) {
            self.reassign_entry();
        }
        Ok(())
    }

    fn reassign_entry(&mut self) {
        let best = (0..self.ids.len() as u32)
            .filter(|&s| !self.is_deleted(s))
            .max_by(|&a, &b| {
                self.levels[a as usize]
                    .cmp(&self.levels[b as usize])
                    .then(b.cmp(&a))
            });
        self.entry = best;
        self.max_level = best.map_or(0, |s| self.levels[s as usize] as usize);
    }

    pub fn search(
        &self,
        query: &[f32],
        k: usize,
        ef: Option<usize>,
    ) -> Result<Vec<SearchHit>, IndexError> {
        self.search_filtered(query, k, ef, &|_| false, &mut SearchStats::default())
    }

    /// Search that skips ids for which `exclude` returns true without letting
    /// them consume result slots.
    pub fn search_filtered(
        &self,
        query: &[f32],
        k: usize,
        ef: Option<usize>,
        exclude: &dyn Fn(NodeId) -> bool,
        stats: &mut SearchStats,
    ) -> Result<Vec<SearchHit>, IndexError> {
        self.check_dim(query)?;
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let unit = distance::normalized(query).ok_or(IndexError::ZeroVector)?;
        if self.entry.is_none() {
            return Ok(Vec::new());
        }
        let ef = ef.unwrap_or(self.params.ef_search).max(k);
        let mut q = Query {
            unit: &unit,
            scratch: vec![0.0; self.store.dim],
            evals: 0,
        };
        let start = self.descend(&mut q, 0).expect("non-empty index");
        let eligible = |s: u32| !self.is_deleted(s) && !exclude(self.ids[s as usize]);
        let found = self.search_layer(&mut q, &[start], ef, 0, &eligible);
        stats.distance_evals += q.evals;
        stats.visited += q.evals;
        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|c| SearchHit {
                id: self.ids[c.slot as usize],
                distance: c.dist,
                partition: self.partition,
            })
            .collect();
        hits.sort_by(hit_order);
        hits.truncate(k);
        Ok(hits)
    }

    /// Exact scan over live vectors (same kernels as the graph search).
    pub fn brute_force(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.check_dim(query)?;
        let unit = distance::normalized(query).ok_or(IndexError::ZeroVector)?;
        let mut q = Query {
            unit: &unit,
            scratch: vec![0.0; self.store.dim],
            evals: 0,
        };
        let mut hits: Vec<SearchHit> = (0..self.ids.len() as u32)
            .filter(|&s| !self.is_deleted(s))
            .map(|s| SearchHit {
                id: self.ids[s as usize],
                distance: self.query_dist(&mut q, s),
                partition: self.partition,
            })
            .collect();
        hits.sort_by(hit_order);
        hits.truncate(k);
        Ok(hits)
    }

    /// Rebuilds the graph over live slots only, copying stored codes verbatim.
    pub fn compacted(&self) -> HnswIndex {
        let mut out = HnswIndex::new(self.store.dim, self.params, self.store.bits)
            .expect("params already validated")
            .with_partition(self.partition);
        for slot in 0..self.ids.len() {
            if self.is_deleted(slot as u32) {
                continue;
            }
            out.insert_encoded(self.ids[slot], &self.store, slot);
        }
        out
    }

    fn insert_encoded(&mut self, id: NodeId, from: &VectorStore, from_slot: usize) {
        let slot = self.ids.len() as u32;
        self.store.push_from(from, from_slot);
        self.ids.push(id);
        self.slot_of.insert(id, slot);
        let level = self.level_for(slot as usize);
        self.levels.push(level as u8);
        self.links.push(vec![Vec::new(); level + 1]);
        if self.entry.is_none() {
            self.entry = Some(slot);
            self.max_level = level;
            return;
        }
        self.link_new(slot, level);
    }

    fn link_new(&mut self, slot: u32, level: usize) {
        let base = self.store.unit_vector(slot as usize);
        let mut q = Query {
            unit: &base,
            scratch: vec![0.0; self.store.dim],
            evals: 0,
        };
        let top = level.min(self.max_level);
        let start = self.descend(&mut q, top).expect("entry point exists");
        let mut entries = vec![start];
        let all = |s: u32| s != slot;
        for l in (0..=top).rev() {
            let found = self.search_layer(&mut q, &entries, self.params.ef_construction, l, &all);
            let neighbors = self.select_neighbors(&found, self.params.m);
            for &n in &neighbors {
                let list = &mut self.links[n as usize][l];
                list.push(slot);
                if list.len() > self.params.max_degree(l) {
                    self.shrink(n, l);
                }
            }
            self.links[slot as usize][l] = neighbors;
            if !found.is_empty() {
                entries = found;
            }
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(slot);
        }
    }

    /// Re-encodes all stored vectors at a new width. The graph is unchanged.
    pub fn requantize(&mut self, bits: Bits) {
        self.store.requantize(bits);
    }

    /// Checks structural invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        for (slot, per_level) in self.links.iter().enumerate() {
            if per_level.len() != self.levels[slot] as usize + 1 {
                return Err(format!("slot {slot}: link levels disagree with level"));
            }
            for (l, list) in per_level.iter().enumerate() {
                if list.len() > self.params.max_degree(l) {
                    return Err(format!("slot {slot} level {l}: degree {}", list.len()));
                }
                for &n in list {
                    if n as usize >= self.ids.len() || (self.levels[n as usize] as usize) < l {
                        return Err(format!("slot {slot} level {l}: bad neighbor {n}"));
                    }
                }
            }
        }
        match self.entry {
            None if !self.slot_of.is_empty() => Err("live vectors but no entry point".into()),
            Some(e) if self.is_deleted(e) => Err("entry point is tombstoned".into()),
            Some(e) if self.levels[e as usize] as usize != self.max_level => {
                Err("entry level differs from max level".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<(NodeId, Vec<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (
                    i as NodeId,
                    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                )
            })
            .collect()
    }

    fn exact(data: &[(NodeId, Vec<f32>)], q: &[f32], k: usize) -> Vec<NodeId> {
        let mut all: Vec<(f32, NodeId)> = data
            .iter()
            .map(|(id, v)| (distance::cosine_distance(q, v), *id))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, id)| id).collect()
    }

    fn small_params() -> HnswParams {
        HnswParams::new(8, 32, 32).with_seed(7)
    }

    #[test]
    fn empty_index() {
        let idx = HnswIndex::new(4, small_params(), Bits::Raw).unwrap();
        assert!(idx
            .search(&[1.0, 0.0, 0.0, 0.0], 3, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn single_vector_is_entry_point() {
        let mut idx = HnswIndex::new(3, small_params(), Bits::Raw).unwrap();
        idx.insert(42, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(idx.entry_point(), Some(42));
        let q = [3.0, 2.0, 1.0];
        let hits = idx.search(&q, 5, None).unwrap();
        assert_eq!(hits.len(), 1);
        let want = distance::cosine_distance(&q, &[1.0, 2.0, 3.0]);
        assert!((hits[0].distance - want).abs() < 1e-6);
    }

    #[test]
    fn self_match_and_duplicate() {
        let data = random_vectors(200, 16, 1);
        let mut idx = HnswIndex::build(16, &data, small_params(), Bits::Raw).unwrap();
        let hits = idx.search(&data[17].1, 1, None).unwrap();
        assert_eq!(hits[0].id, 17);
        assert!(hits[0].distance <= 1e-6);
        assert!(matches!(
            idx.insert(17, &data[0].1),
            Err(IndexError::DuplicateId(17))
        ));
        assert!(matches!(
            idx.insert(999, &[1.0; 3]),
            Err(IndexError::DimensionMismatch {
                expected: 16,
                found: 3
            })
        ));
        assert!(matches!(
            idx.insert(999, &[0.0; 16]),
            Err(IndexError::ZeroVector)
        ));
    }

    #[test]
    fn k_exceeding_live_count() {
        let data = random_vectors(5, 8, 2);
        let idx = HnswIndex::build(8, &data, small_params(), Bits::Raw).unwrap();
        assert_eq!(idx.search(&data[0].1, 50, None).unwrap().len(), 5);
    }

    #[test]
    fn remove_semantics() {
        let data = random_vectors(300, 16, 3);
        let mut idx = HnswIndex::build(16, &data, small_params(), Bits::Raw).unwrap();
        idx.remove(5).unwrap();
        assert!(matches!(idx.remove(5), Err(IndexError::UnknownId(5))));
        let hits = idx.search(&data[5].1, 10, Some(300)).unwrap();
        assert!(hits.iter().all(|h| h.id != 5));
        let entry = idx.entry_point().unwrap();
        idx.remove(entry).unwrap();
        assert_ne!(idx.entry_point(), Some(entry));
        idx.validate().unwrap();
        assert!(!idx.search(&data[0].1, 5, None).unwrap().is_empty());
        // Re-inserting a removed id is allowed.
        idx.insert(5, &data[5].1).unwrap();
        assert_eq!(idx.search(&data[5].1, 1, None).unwrap()[0].id, 5);
    }

    #[test]
    fn remove_everything() {
        let data = random_vectors(10, 4, 4);
        let mut idx = HnswIndex::build(4, &data, small_params(), Bits::Raw).unwrap();
        for (id, _) in &data {
            idx.remove(*id).unwrap();
        }
        assert!(idx.is_empty());
        assert_eq!(idx.entry_point(), None);
        assert!(idx.search(&data[0].1, 3, None).unwrap().is_empty());
        idx.insert(100, &data[0].1).unwrap();
        assert_eq!(idx.search(&data[0].1, 3, None).unwrap()[0].id, 100);
    }

    #[test]
    fn exhaustive_ef_is_exact() {
        let data = random_vectors(500, 12, 5);
        let mut idx = HnswIndex::build(12, &data, small_params(), Bits::Raw).unwrap();
        for id in [3, 50, 77] {
            idx.remove(id).unwrap();
        }
        let live: Vec<_> = data
            .iter()
            .filter(|(id, _)| ![3, 50, 77].contains(id))
            .cloned()
            .collect();
        let queries = random_vectors(30, 12, 6);
        for (_, q) in &queries {
            let got: Vec<NodeId> = idx
                .search(q, 10, Some(live.len()))
                .unwrap()
                .iter()
                .map(|h| h.id)
                .collect();
            assert_eq!(got, exact(&live, q, 10));
        }
    }

    #[test]
    fn compaction_preserves_results() {
        let data = random_vectors(400, 8, 8);
        let mut idx = HnswIndex::build(8, &data, small_params(), Bits::B8).unwrap();
        for id in 0..150 {
            idx.remove(id).unwrap();
        }
        let c = idx.compacted();
        assert_eq!(c.len(), 250);
        assert_eq!(c.tombstone_count(), 0);
        c.validate().unwrap();
        let (_, q) = &data[200];
        let a = idx.search(q, 10, Some(400)).unwrap();
        let b = c.search(q, 10, Some(400)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_build() {
        let data = random_vectors(300, 8, 9);
        let a = HnswIndex::build(8, &data, small_params(), Bits::Raw).unwrap();
        let b = HnswIndex::build(8, &data, small_params(), Bits::Raw).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degree_bounds_under_random_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut idx = HnswIndex::new(6, HnswParams::new(4, 8, 8), Bits::Raw).unwrap();
        let mut live = Vec::new();
        for step in 0..2000u64 {
            if !live.is_empty() && rng.random_bool(0.3) {
                let i = rng.random_range(0..live.len());
                let id = live.swap_remove(i);
                idx.remove(id).unwrap();
            } else {
                let v: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                idx.insert(step, &v).unwrap();
                live.push(step);
            }
        }
        idx.validate().unwrap();
        assert_eq!(idx.len(), live.len());
    }

    #[test]
    fn params_validation() {
        assert!(HnswParams::new(1, 10, 10).validate().is_err());
        assert!(HnswParams::new(16, 8, 10).validate().is_err());
        assert!(HnswParams::new(16, 16, 0).validate().is_err());
        let p = HnswParams::default();
        assert_eq!((p.m, p.ef_construction, p.ef_search), (32, 200, 200));
        assert!((p.level_mult - 1.0 / 32f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn recall_on_random_data() {
        let data = random_vectors(2000, 32, 11);
        let idx = HnswIndex::build(32, &data, HnswParams::new(16, 100, 64), Bits::Raw).unwrap();
        let queries = random_vectors(100, 32, 12);
        let mut hit = 0;
        for (_, q) in &queries {
            let truth = exact(&data, q, 10);
            let got = idx.search(q, 10, None).unwrap();
            hit += got.iter().filter(|h| truth.contains(&h.id)).count();
        }
        let recall = hit as f64 / 1000.0;
        assert!(recall >= 0.95, "recall {recall}");
    }
}
