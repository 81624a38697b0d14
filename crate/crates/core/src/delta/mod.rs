//! Versioned vector storage for one modality: a set of stable per-partition
//! HNSW indexes plus an MVCC delta of staged inserts, updates and deletes.
//!
//! Readers take a [`ReadSnapshot`], a consistent cut made of shared pointers
//! to the stable indexes and to the delta chunks; they never wait for
//! writers or for vacuum. Vacuum folds a prefix of the delta into copies of
//! the affected indexes and installs them as a new stable epoch.

mod log;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{DeltaLog, LoggedRecord, LOG_FORMAT_VERSION};

use crate::codec::SnapshotError;
use crate::distance;
use crate::hnsw::{hit_order, HnswIndex, HnswParams, IndexError, SearchHit, SearchStats};
use crate::partition::{PartitionError, PartitionModel, RepartitionPlan};
use crate::quant::Bits;
use crate::{NodeId, PartitionId};

const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum DeltaOp {
    Insert = 0,
    Update = 1,
    Delete = 2,
}

impl DeltaOp {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DeltaOp::Insert),
            1 => Some(DeltaOp::Update),
            2 => Some(DeltaOp::Delete),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DeltaError {
    #[error("id {0} is not live")]
    UnknownId(NodeId),
    #[error("id {0} is already live")]
    DuplicateInsert(NodeId),
    #[error("insert and update need an embedding")]
    MissingEmbedding,
    #[error("embedding has {found} components, index expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero or non-finite vector")]
    ZeroVector,
    #[error("k must be positive")]
    InvalidK,
    #[error("partition {0} does not exist")]
    UnknownPartition(u16),
    #[error("replayed version {found} is not above high-water {high_water}")]
    VersionOrder { found: u64, high_water: u64 },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Log(#[from] SnapshotError),
}

/// A staged change as seen by callers.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRecord {
    pub id: NodeId,
    pub op: DeltaOp,
    pub embedding: Option<Vec<f32>>,
    pub version: u64,
}

impl DeltaRecord {
    pub fn insert(id: NodeId, embedding: Vec<f32>) -> Self {
        Self {
            id,
            op: DeltaOp::Insert,
            embedding: Some(embedding),
            version: 0,
        }
    }

    pub fn update(id: NodeId, embedding: Vec<f32>) -> Self {
        Self {
            id,
            op: DeltaOp::Update,
            embedding: Some(embedding),
            version: 0,
        }
    }

    pub fn delete(id: NodeId) -> Self {
        Self {
            id,
            op: DeltaOp::Delete,
            embedding: None,
            version: 0,
        }
    }
}

#[derive(Debug)]
struct Rec {
    version: u64,
    id: NodeId,
    op: DeltaOp,
    unit: Option<Vec<f32>>,
    norm: f32,
    partition: u16,
}

type Chunk = Arc<[Arc<Rec>]>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaConfig {
    /// Run vacuum on a background thread once the watermark is crossed.
    pub auto_vacuum: bool,
    pub watermark_fraction: f64,
    pub watermark_records: usize,
    pub max_merge_threads: usize,
    /// Tombstone share above which a touched partition is rebuilt.
    pub compaction_threshold: f64,
    pub vacuum_batch: usize,
}

impl Default for DeltaConfig {
    fn default() -> Self {
        Self {
            auto_vacuum: true,
            watermark_fraction: 0.05,
            watermark_records: 50_000,
            max_merge_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            compaction_threshold: 0.2,
            vacuum_batch: usize::MAX,
        }
    }
}

/// `max(1, floor(parallelism * (1 - cpu_load)))`, clamped to `max_threads`.
pub fn merge_thread_budget(cpu_load: f64, parallelism: usize, max_threads: usize) -> usize {
    let load = if cpu_load.is_finite() {
        cpu_load.clamp(0.0, 1.0)
    } else {
        1.0
    };
    let budget = ((parallelism as f64) * (1.0 - load)).floor() as usize;
    budget.max(1).min(max_threads.max(1))
}

/// Thread budget for a merge given the current CPU load, using the
/// machine's available parallelism.
pub fn adaptive_merge_threads(cpu_load: f64, max_threads: usize) -> usize {
    let par = std::thread::available_parallelism().map_or(1, |n| n.get());
    merge_thread_budget(cpu_load, par, max_threads)
}

/// One-minute load average over available parallelism, if the platform
/// exposes it.
fn current_cpu_load() -> f64 {
    let par = std::thread::available_parallelism().map_or(1, |n| n.get()) as f64;
    std::fs::read_to_string("/proc/loadavg")
        .ok()
        .and_then(|s| {
            s.split_whitespace()
                .next()
                .and_then(|x| x.parse::<f64>().ok())
        })
        .map_or(0.0, |l| (l / par).clamp(0.0, 1.0))
}

/// Immutable set of stable partition indexes.
#[derive(Debug)]
pub struct StableEpoch {
    epoch: u64,
    merged_upto: u64,
    partitions: Vec<Arc<HnswIndex>>,
}

impl StableEpoch {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Highest delta version folded into these indexes.
    pub fn merged_upto(&self) -> u64 {
        self.merged_upto
    }

    pub fn partitions(&self) -> &[Arc<HnswIndex>] {
        &self.partitions
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(|p| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn locate(&self, id: NodeId) -> Option<u16> {
        self.partitions
            .iter()
            .position(|p| p.contains(id))
            .map(|p| p as u16)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub inserted: usize,
    pub updated: usize,
    pub deleted: usize,
    pub skipped: usize,
    pub pruned: usize,
    pub compacted: Vec<u16>,
    pub remaining: usize,
    pub epoch: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HybridStats {
    pub stable_hits: usize,
    pub delta_hits: usize,
    pub distance_evals: usize,
    pub delta_scanned: usize,
}

struct State {
    stable: Arc<StableEpoch>,
    chunks: Vec<Chunk>,
    tail: Vec<Arc<Rec>>,
    per_id: HashMap<NodeId, Vec<(u64, DeltaOp)>>,
    records: usize,
    high_water: u64,
    claim: Option<u64>,
    model: Arc<PartitionModel>,
    log: Option<DeltaLog>,
}

impl State {
    fn is_live(&self, id: NodeId) -> bool {
        match self.per_id.get(&id).and_then(|v| v.last()) {
            Some(&(_, op)) => op != DeltaOp::Delete,
            None => self.stable.locate(id).is_some(),
        }
    }

    fn push(&mut self, rec: Rec) {
        self.per_id
            .entry(rec.id)
            .or_default()
            .push((rec.version, rec.op));
        self.tail.push(Arc::new(rec));
        self.records += 1;
        if self.tail.len() == CHUNK {
            let sealed: Chunk = std::mem::take(&mut self.tail).into();
            self.chunks.push(sealed);
        }
    }

    fn iter(&self) -> impl Iterator<Item = &Arc<Rec>> {
        self.chunks
            .iter()
            .flat_map(|c| c.iter())
            .chain(self.tail.iter())
    }

    fn remove_version(&mut self, version: u64) {
        if self.tail.first().is_some_and(|r| r.version <= version) {
            self.tail.retain(|r| r.version != version);
        } else {
            let i = self.chunks.partition_point(|c| c[0].version <= version);
            if i == 0 {
                return;
            }
            let rest: Vec<Arc<Rec>> = self.chunks[i - 1]
                .iter()
                .filter(|r| r.version != version)
                .cloned()
                .collect();
            if rest.is_empty() {
                self.chunks.remove(i - 1);
            } else {
                self.chunks[i - 1] = rest.into();
            }
        }
        self.records -= 1;
    }

    /// Drops every record with version <= `upto` (always a prefix).
    fn prune_upto(&mut self, upto: u64) -> usize {
        let before = self.records;
        let mut dropped = 0;
        while let Some(first) = self.chunks.first() {
            if first.last().is_some_and(|r| r.version <= upto) {
                dropped += first.len();
                self.chunks.remove(0);
            } else {
                if first[0].version <= upto {
                    let rest: Vec<Arc<Rec>> =
                        first.iter().filter(|r| r.version > upto).cloned().collect();
                    dropped += first.len() - rest.len();
                    self.chunks[0] = rest.into();
                }
                break;
            }
        }
        if self.chunks.is_empty() {
            let n = self.tail.len();
            self.tail.retain(|r| r.version > upto);
            dropped += n - self.tail.len();
        }
        self.records = before - dropped;
        self.per_id.retain(|_, v| {
            v.retain(|&(ver, _)| ver > upto);
            !v.is_empty()
        });
        dropped
    }

    fn stable_len(&self) -> usize {
        self.stable.len()
    }
}

struct Shared {
    state: RwLock<State>,
    vacuum_lock: Mutex<()>,
    config: DeltaConfig,
    dim: usize,
    modality_ordinal: u16,
    wake: Mutex<bool>,
    signal: Condvar,
    shutdown: AtomicBool,
}

/// Stable partitions plus delta for one modality.
pub struct VersionedIndex {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for VersionedIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VersionedIndex")
            .field("dim", &self.shared.dim)
            .field("stable", &self.stable_len())
            .field("delta", &self.delta_len())
            .finish()
    }
}

impl Drop for VersionedIndex {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        {
            let mut w = self.shared.wake.lock();
            *w = true;
        }
        self.shared.signal.notify_all();
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

fn worker_loop(shared: Arc<Shared>) {
    loop {
        {
            let mut pending = shared.wake.lock();
            while !*pending && !shared.shutdown.load(Ordering::SeqCst) {
                shared.signal.wait(&mut pending);
            }
            *pending = false;
        }
        if shared.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let threads = adaptive_merge_threads(current_cpu_load(), shared.config.max_merge_threads);
        let _ = vacuum_impl(&shared, shared.config.vacuum_batch, threads);
    }
}

enum PartOp {
    Add(Arc<Rec>),
    Remove(NodeId),
}

fn vacuum_impl(
    shared: &Shared,
    max_batch: usize,
    threads: usize,
) -> Result<MergeReport, DeltaError> {
    let _guard = shared.vacuum_lock.lock();
    let (batch, stable) = {
        let mut st = shared.state.write();
        let batch: Vec<Arc<Rec>> = st.iter().take(max_batch).cloned().collect();
        if batch.is_empty() {
            return Ok(MergeReport {
                remaining: st.records,
                epoch: st.stable.epoch,
                ..Default::default()
            });
        }
        st.claim = batch.last().map(|r| r.version);
        (batch, st.stable.clone())
    };
    let claim = batch.last().map(|r| r.version).unwrap_or(0);

    let mut report = MergeReport {
        threads,
        ..Default::default()
    };
    let k = stable.partitions.len();
    let mut location: HashMap<NodeId, Option<u16>> = HashMap::new();
    let mut ops: Vec<Vec<PartOp>> = (0..k).map(|_| Vec::new()).collect();
    for rec in &batch {
        let loc = *location
            .entry(rec.id)
            .or_insert_with(|| stable.locate(rec.id));
        match rec.op {
            DeltaOp::Insert | DeltaOp::Update => {
                if let Some(p) = loc {
                    ops[p as usize].push(PartOp::Remove(rec.id));
                }
                ops[rec.partition as usize].push(PartOp::Add(rec.clone()));
                location.insert(rec.id, Some(rec.partition));
                if rec.op == DeltaOp::Insert {
                    report.inserted += 1;
                } else {
                    report.updated += 1;
                }
            }
            DeltaOp::Delete => {
                match loc {
                    Some(p) => {
                        ops[p as usize].push(PartOp::Remove(rec.id));
                        report.deleted += 1;
                    }
                    None => report.skipped += 1,
                }
                location.insert(rec.id, None);
            }
        }
    }

    let threshold = shared.config.compaction_threshold;
    let apply =
        |(p, list): (usize, Vec<PartOp>)| -> Result<(usize, Arc<HnswIndex>, bool), IndexError> {
            let mut index: HnswIndex = (*stable.partitions[p]).clone();
            for op in list {
                match op {
                    PartOp::Add(rec) => {
                        index.insert(rec.id, rec.unit.as_deref().expect("embedding"))?
                    }
                    PartOp::Remove(id) => index.remove(id)?,
                }
            }
            let slots = index.slots();
            let compact = slots > 0 && index.tombstone_count() as f64 > threshold * slots as f64;
            if compact {
                index = index.compacted();
            }
            Ok((p, Arc::new(index), compact))
        };
    let work: Vec<(usize, Vec<PartOp>)> = ops
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let results: Result<Vec<_>, IndexError> = if threads <= 1 || work.len() <= 1 {
        work.into_iter().map(apply).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| work.into_par_iter().map(apply).collect()),
            Err(_) => work.into_iter().map(apply).collect(),
        }
    };
    let results = match results {
        Ok(r) => r,
        Err(e) => {
            shared.state.write().claim = None;
            return Err(e.into());
        }
    };

    let mut partitions = stable.partitions.clone();
    for (p, index, compacted) in results {
        partitions[p] = index;
        if compacted {
            report.compacted.push(p as u16);
        }
    }
    let mut st = shared.state.write();
    st.stable = Arc::new(StableEpoch {
        epoch: stable.epoch + 1,
        merged_upto: claim,
        partitions,
    });
    report.pruned = st.prune_upto(claim);
    st.claim = None;
    report.remaining = st.records;
    report.epoch = st.stable.epoch;
    Ok(report)
}

struct StageArgs {
    partition: Option<u16>,
    version: Option<u64>,
    log: bool,
}

impl VersionedIndex {
    /// Empty stable partitions, one per centroid of `model`.
    pub fn new(
        dim: usize,
        model: PartitionModel,
        params: HnswParams,
        bits: Bits,
        modality_ordinal: u16,
        config: DeltaConfig,
    ) -> Result<Self, DeltaError> {
        if model.dim() != dim {
            return Err(DeltaError::DimensionMismatch {
                expected: dim,
                found: model.dim(),
            });
        }
        let partitions = (0..model.k())
            .map(|c| {
                HnswIndex::new(dim, params, bits).map(|i| {
                    Arc::new(i.with_partition(PartitionId::new(modality_ordinal, c as u16)))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::assemble(
            dim,
            model,
            partitions,
            0,
            0,
            modality_ordinal,
            config,
        ))
    }

    /// Reassembles an index from persisted stable partitions.
    pub fn from_stable(
        dim: usize,
        model: PartitionModel,
        partitions: Vec<HnswIndex>,
        epoch: u64,
        merged_upto: u64,
        modality_ordinal: u16,
        config: DeltaConfig,
    ) -> Result<Self, DeltaError> {
        if partitions.len() != model.k() {
            return Err(DeltaError::UnknownPartition(partitions.len() as u16));
        }
        for p in &partitions {
            if p.dim() != dim {
                return Err(DeltaError::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
        }
        let partitions = partitions.into_iter().map(Arc::new).collect();
        Ok(Self::assemble(
            dim,
            model,
            partitions,
            epoch,
            merged_upto,
            modality_ordinal,
            config,
        ))
    }

    fn assemble(
        dim: usize,
        model: PartitionModel,
        partitions: Vec<Arc<HnswIndex>>,
        epoch: u64,
        merged_upto: u64,
        modality_ordinal: u16,
        config: DeltaConfig,
    ) -> Self {
        let state = State {
            stable: Arc::new(StableEpoch {
                epoch,
                merged_upto,
                partitions,
            }),
            chunks: Vec::new(),
            tail: Vec::new(),
            per_id: HashMap::new(),
            records: 0,
            high_water: merged_upto,
            claim: None,
            model: Arc::new(model),
            log: None,
        };
        let shared = Arc::new(Shared {
            state: RwLock::new(state),
            vacuum_lock: Mutex::new(()),
            config,
            dim,
            modality_ordinal,
            wake: Mutex::new(false),
            signal: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let worker = config.auto_vacuum.then(|| {
            let s = shared.clone();
            std::thread::Builder::new()
                .name("hmgi-vacuum".into())
                .spawn(move || worker_loop(s))
                .expect("spawn vacuum thread")
        });
        Self { shared, worker }
    }

    pub fn dim(&self) -> usize {
        self.shared.dim
    }

    pub fn config(&self) -> &DeltaConfig {
        &self.shared.config
    }

    pub fn modality_ordinal(&self) -> u16 {
        self.shared.modality_ordinal
    }

    pub fn model(&self) -> Arc<PartitionModel> {
        self.shared.state.read().model.clone()
    }

    pub fn stable(&self) -> Arc<StableEpoch> {
        self.shared.state.read().stable.clone()
    }

    pub fn stable_len(&self) -> usize {
        self.shared.state.read().stable_len()
    }

    /// Number of delta records not yet merged.
    pub fn delta_len(&self) -> usize {
        self.shared.state.read().records
    }

    pub fn high_water(&self) -> u64 {
        self.shared.state.read().high_water
    }

    pub fn is_live(&self, id: NodeId) -> bool {
        self.shared.state.read().is_live(id)
    }

    /// Routes every subsequent staged record to `log`.
    pub fn attach_log(&self, log: DeltaLog) {
        self.shared.state.write().log = Some(log);
    }

    pub fn detach_log(&self) -> Option<DeltaLog> {
        self.shared.state.write().log.take()
    }

    /// Rewrites the attached log to hold exactly the unmerged records.
    pub fn compact_log(&self) -> Result<(), DeltaError> {
        let mut st = self.shared.state.write();
        let records: Vec<LoggedRecord> = st.iter().map(|r| to_logged(r)).collect();
        if let Some(log) = st.log.as_mut() {
            log.rewrite(&records)?;
        }
        Ok(())
    }

    /// Unmerged records in version order.
    pub fn pending_records(&self) -> Vec<LoggedRecord> {
        self.shared
            .state
            .read()
            .iter()
            .map(|r| to_logged(r))
            .collect()
    }

    /// Builds the stable partitions directly from `items`, bypassing the
    /// delta. Intended for initial loads.
    pub fn bulk_load(&self, items: &[(NodeId, Vec<f32>)]) -> Result<(), DeltaError> {
        let _guard = self.shared.vacuum_lock.lock();
        let (stable, model) = {
            let st = self.shared.state.read();
            (st.stable.clone(), st.model.clone())
        };
        let k = stable.partitions.len();
        let mut buckets: Vec<Vec<(NodeId, Vec<f32>)>> = vec![Vec::new(); k];
        let mut seen = HashSet::with_capacity(items.len());
        {
            let st = self.shared.state.read();
            for (id, v) in items {
                if v.len() != self.shared.dim {
                    return Err(DeltaError::DimensionMismatch {
                        expected: self.shared.dim,
                        found: v.len(),
                    });
                }
                if !seen.insert(*id) || st.is_live(*id) {
                    return Err(DeltaError::DuplicateInsert(*id));
                }
                let unit = distance::normalized(v).ok_or(DeltaError::ZeroVector)?;
                let c = model.assign(&unit)? as usize;
                buckets[c].push((*id, unit));
            }
        }
        let built: Result<Vec<Arc<HnswIndex>>, IndexError> = buckets
            .into_par_iter()
            .enumerate()
            .map(|(c, bucket)| {
                let mut idx = (*stable.partitions[c]).clone();
                for (id, v) in bucket {
                    idx.insert(id, &v)?;
                }
                Ok(Arc::new(idx))
            })
            .collect();
        let partitions = built?;
        let mut st = self.shared.state.write();
        st.stable = Arc::new(StableEpoch {
            epoch: stable.epoch + 1,
            merged_upto: stable.merged_upto,
            partitions,
        });
        Ok(())
    }

    /// Commits one record and returns its version.
    pub fn stage(&self, record: DeltaRecord) -> Result<u64, DeltaError> {
        self.stage_with(
            record.op,
            record.id,
            record.embedding.as_deref(),
            StageArgs {
                partition: None,
                version: None,
                log: true,
            },
        )
    }

    pub fn insert(&self, id: NodeId, embedding: &[f32]) -> Result<u64, DeltaError> {
        self.stage_with(
            DeltaOp::Insert,
            id,
            Some(embedding),
            StageArgs {
                partition: None,
                version: None,
                log: true,
            },
        )
    }

    pub fn update(&self, id: NodeId, embedding: &[f32]) -> Result<u64, DeltaError> {
        self.stage_with(
            DeltaOp::Update,
            id,
            Some(embedding),
            StageArgs {
                partition: None,
                version: None,
                log: true,
            },
        )
    }

    pub fn delete(&self, id: NodeId) -> Result<u64, DeltaError> {
        self.stage_with(
            DeltaOp::Delete,
            id,
            None,
            StageArgs {
                partition: None,
                version: None,
                log: true,
            },
        )
    }

    /// Re-applies logged records above the stable merge point, keeping their
    /// versions and partitions. Returns how many were applied.
    pub fn replay(&self, records: &[LoggedRecord]) -> Result<usize, DeltaError> {
        let floor = self.stable().merged_upto;
        let mut applied = 0;
        for r in records.iter().filter(|r| r.version > floor) {
            self.stage_with(
                r.op,
                r.id,
                r.embedding.as_deref(),
                StageArgs {
                    partition: Some(r.partition),
                    version: Some(r.version),
                    log: false,
                },
            )?;
            applied += 1;
        }
        Ok(applied)
    }

    fn stage_with(
        &self,
        op: DeltaOp,
        id: NodeId,
        embedding: Option<&[f32]>,
        args: StageArgs,
    ) -> Result<u64, DeltaError> {
        let unit = match op {
            DeltaOp::Delete => None,
            _ => {
                let e = embedding.ok_or(DeltaError::MissingEmbedding)?;
                if e.len() != self.shared.dim {
                    return Err(DeltaError::DimensionMismatch {
                        expected: self.shared.dim,
                        found: e.len(),
                    });
                }
                Some(distance::normalized(e).ok_or(DeltaError::ZeroVector)?)
            }
        };
        let mut st = self.shared.state.write();
        let live = st.is_live(id);
        match op {
            DeltaOp::Insert if live => return Err(DeltaError::DuplicateInsert(id)),
            DeltaOp::Update | DeltaOp::Delete if !live => return Err(DeltaError::UnknownId(id)),
            _ => {}
        }
        let partition = match (args.partition, &unit) {
            (Some(p), _) => {
                if p as usize >= st.stable.partitions.len() {
                    return Err(DeltaError::UnknownPartition(p));
                }
                p
            }
            (None, Some(u)) => st.model.assign(u)?,
            (None, None) => 0,
        };
        let version = match args.version {
            Some(v) if v <= st.high_water => {
                return Err(DeltaError::VersionOrder {
                    found: v,
                    high_water: st.high_water,
                })
            }
            Some(v) => v,
            None => st.high_water + 1,
        };
        let norm = unit.as_deref().map_or(0.0, distance::norm);
        let rec = Rec {
            version,
            id,
            op,
            unit,
            norm,
            partition,
        };
        if args.log {
            if let Some(log) = st.log.as_mut() {
                log.append(&to_logged(&rec))?;
            }
        }
        st.high_water = version;

        let claim = st.claim;
        let annihilate = op == DeltaOp::Delete
            && st.stable.locate(id).is_none()
            && st
                .per_id
                .get(&id)
                .is_some_and(|v| v.iter().all(|&(ver, _)| claim.is_none_or(|c| ver > c)));
        if annihilate {
            let versions: Vec<u64> = st
                .per_id
                .remove(&id)
                .unwrap()
                .into_iter()
                .map(|(v, _)| v)
                .collect();
            for v in versions {
                st.remove_version(v);
            }
        } else {
            st.push(rec);
        }

        let cfg = &self.shared.config;
        let trigger = cfg.auto_vacuum
            && (st.records as f64 > cfg.watermark_fraction * st.stable_len() as f64
                || st.records > cfg.watermark_records);
        drop(st);
        if trigger {
            *self.shared.wake.lock() = true;
            self.shared.signal.notify_one();
        }
        Ok(version)
    }

    /// A consistent read cut: current stable epoch plus every committed
    /// delta record.
    pub fn snapshot(&self) -> ReadSnapshot {
        let st = self.shared.state.read();
        ReadSnapshot {
            stable: st.stable.clone(),
            chunks: st.chunks.clone(),
            tail: st.tail.clone(),
            high_water: st.high_water,
            modality_ordinal: self.shared.modality_ordinal,
            dim: self.shared.dim,
            view: OnceLock::new(),
        }
    }

    /// Folds up to `max_batch` of the oldest delta records into the stable
    /// indexes, using a thread budget derived from the current CPU load.
    pub fn vacuum(&self, max_batch: usize) -> Result<MergeReport, DeltaError> {
        let threads =
            adaptive_merge_threads(current_cpu_load(), self.shared.config.max_merge_threads);
        vacuum_impl(&self.shared, max_batch, threads)
    }

    pub fn vacuum_with_threads(
        &self,
        max_batch: usize,
        threads: usize,
    ) -> Result<MergeReport, DeltaError> {
        vacuum_impl(&self.shared, max_batch, threads)
    }

    /// Waits for any running vacuum to finish.
    pub fn wait_for_vacuum(&self) {
        drop(self.shared.vacuum_lock.lock());
    }

    /// Re-encodes one partition at a new width and installs it as a new
    /// stable epoch.
    pub fn requantize_partition(&self, cluster: u16, bits: Bits) -> Result<(), DeltaError> {
        let _guard = self.shared.vacuum_lock.lock();
        let stable = self.stable();
        let Some(current) = stable.partitions.get(cluster as usize) else {
            return Err(DeltaError::UnknownPartition(cluster));
        };
        if current.bits() == bits {
            return Ok(());
        }
        let mut idx = (**current).clone();
        idx.requantize(bits);
        let mut partitions = stable.partitions.clone();
        partitions[cluster as usize] = Arc::new(idx);
        let mut st = self.shared.state.write();
        st.stable = Arc::new(StableEpoch {
            epoch: stable.epoch + 1,
            merged_upto: stable.merged_upto,
            partitions,
        });
        Ok(())
    }

    pub fn requantize_all(&self, bits: Bits) -> Result<(), DeltaError> {
        let k = self.stable().partitions.len();
        for c in 0..k {
            self.requantize_partition(c as u16, bits)?;
        }
        Ok(())
    }

    /// Installs the plan's model and re-stages every moved embedding as an
    /// update routed to its new partition. The old copies disappear from
    /// the stable indexes at the next merge.
    pub fn apply_repartition(&self, plan: &RepartitionPlan) -> Result<usize, DeltaError> {
        let snap = self.snapshot();
        {
            let mut st = self.shared.state.write();
            plan.check_version(&st.model)?;
            if plan.model.k() != st.model.k() || plan.model.dim() != self.shared.dim {
                return Err(DeltaError::UnknownPartition(plan.model.k() as u16));
            }
            st.model = Arc::new(plan.model.clone());
        }
        let mut moved = 0;
        for mv in &plan.moves {
            let Some(v) = snap.vector(mv.id) else {
                continue;
            };
            match self.stage_with(
                DeltaOp::Update,
                mv.id,
                Some(&v),
                StageArgs {
                    partition: Some(mv.to),
                    version: None,
                    log: true,
                },
            ) {
                Ok(_) => moved += 1,
                Err(DeltaError::UnknownId(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(moved)
    }
}

fn to_logged(r: &Rec) -> LoggedRecord {
    LoggedRecord {
        version: r.version,
        id: r.id,
        op: r.op,
        partition: r.partition,
        embedding: r.unit.clone(),
    }
}

struct View {
    live: Vec<Arc<Rec>>,
    suppressed: HashSet<NodeId>,
}

/// Immutable read cut over stable indexes and delta.
pub struct ReadSnapshot {
    stable: Arc<StableEpoch>,
    chunks: Vec<Chunk>,
    tail: Vec<Arc<Rec>>,
    high_water: u64,
    modality_ordinal: u16,
    dim: usize,
    view: OnceLock<View>,
}

impl std::fmt::Debug for ReadSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReadSnapshot")
            .field("epoch", &self.stable.epoch)
            .field("high_water", &self.high_water)
            .finish()
    }
}

impl ReadSnapshot {
    pub fn epoch(&self) -> u64 {
        self.stable.epoch
    }

    pub fn high_water(&self) -> u64 {
        self.high_water
    }

    pub fn stable(&self) -> &StableEpoch {
        &self.stable
    }

    fn view(&self) -> &View {
        self.view.get_or_init(|| {
            let mut latest: HashMap<NodeId, Arc<Rec>> = HashMap::new();
            for r in self
                .chunks
                .iter()
                .flat_map(|c| c.iter())
                .chain(self.tail.iter())
            {
                latest.insert(r.id, r.clone());
            }
            let suppressed: HashSet<NodeId> = latest.keys().copied().collect();
            let mut live: Vec<Arc<Rec>> = latest
                .into_values()
                .filter(|r| r.op != DeltaOp::Delete)
                .collect();
            live.sort_by_key(|r| r.id);
            View { live, suppressed }
        })
    }

    /// Number of visible delta records.
    pub fn delta_records(&self) -> usize {
        self.chunks.iter().map(|c| c.len()).sum::<usize>() + self.tail.len()
    }

    /// Ids whose stable copy is hidden by a visible delta record.
    pub fn suppressed(&self, id: NodeId) -> bool {
        self.view().suppressed.contains(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        let v = self.view();
        if v.suppressed.contains(&id) {
            v.live.binary_search_by_key(&id, |r| r.id).is_ok()
        } else {
            self.stable.locate(id).is_some()
        }
    }

    /// The visible (unit-length) embedding of `id`.
    pub fn vector(&self, id: NodeId) -> Option<Vec<f32>> {
        let v = self.view();
        if v.suppressed.contains(&id) {
            let i = v.live.binary_search_by_key(&id, |r| r.id).ok()?;
            v.live[i].unit.clone()
        } else {
            let p = self.stable.locate(id)?;
            self.stable.partitions[p as usize].vector(id)
        }
    }

    /// Partition id holding the visible copy of `id`.
    pub fn partition_of(&self, id: NodeId) -> Option<PartitionId> {
        let v = self.view();
        if v.suppressed.contains(&id) {
            let i = v.live.binary_search_by_key(&id, |r| r.id).ok()?;
            Some(PartitionId::new(self.modality_ordinal, v.live[i].partition))
        } else {
            let p = self.stable.locate(id)?;
            Some(self.stable.partitions[p as usize].partition())
        }
    }

    /// Every visible `(id, unit vector)`, ascending by id.
    pub fn logical_vectors(&self) -> Vec<(NodeId, Vec<f32>)> {
        let v = self.view();
        let mut out: Vec<(NodeId, Vec<f32>)> = Vec::new();
        for p in &self.stable.partitions {
            for id in p.ids() {
                if !v.suppressed.contains(&id) {
                    out.push((id, p.vector(id).expect("live id")));
                }
            }
        }
        for r in &v.live {
            out.push((r.id, r.unit.clone().expect("live record")));
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Number of visible vectors.
    pub fn len(&self) -> usize {
        let v = self.view();
        let hidden = v
            .suppressed
            .iter()
            .filter(|&&id| self.stable.locate(id).is_some())
            .count();
        self.stable.len() - hidden + v.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unit_query(&self, query: &[f32]) -> Result<Vec<f32>, DeltaError> {
        if query.len() != self.dim {
            return Err(DeltaError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        distance::normalized(query).ok_or(DeltaError::ZeroVector)
    }

    /// Exact cosine top-k over the visible delta inserts and updates.
    pub fn delta_search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, DeltaError> {
        let q = self.unit_query(query)?;
        Ok(self.delta_scan(&q, k, &|_| true))
    }

    fn delta_scan(&self, q: &[f32], k: usize, keep: &dyn Fn(NodeId) -> bool) -> Vec<SearchHit> {
        let mut hits: Vec<SearchHit> = self
            .view()
            .live
            .iter()
            .filter(|r| keep(r.id))
            .map(|r| SearchHit {
                id: r.id,
                distance: distance::cosine_distance_unit(q, r.unit.as_deref().unwrap(), r.norm),
                partition: PartitionId::new(self.modality_ordinal, r.partition),
            })
            .collect();
        if hits.len() > k {
            hits.select_nth_unstable_by(k, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        hits
    }

    /// Stable ANN hits (with overridden and deleted ids filtered out) merged
    /// with the exact delta scan.
    pub fn hybrid_topk(
        &self,
        query: &[f32],
        k: usize,
        ef: Option<usize>,
    ) -> Result<Vec<SearchHit>, DeltaError> {
        self.hybrid_topk_with_stats(query, k, ef, &mut HybridStats::default())
    }

    pub fn hybrid_topk_with_stats(
        &self,
        query: &[f32],
        k: usize,
        ef: Option<usize>,
        stats: &mut HybridStats,
    ) -> Result<Vec<SearchHit>, DeltaError> {
        self.hybrid_topk_filtered(query, k, ef, &|_| true, stats)
    }

    /// Hybrid top-k restricted to ids for which `keep` returns true.
    pub fn hybrid_topk_filtered(
        &self,
        query: &[f32],
        k: usize,
        ef: Option<usize>,
        keep: &dyn Fn(NodeId) -> bool,
        stats: &mut HybridStats,
    ) -> Result<Vec<SearchHit>, DeltaError> {
        if k == 0 {
            return Err(DeltaError::InvalidK);
        }
        let q = self.unit_query(query)?;
        let view = self.view();
        let mut hits: Vec<SearchHit> = Vec::new();
        let exclude = |id: NodeId| view.suppressed.contains(&id) || !keep(id);
        for p in &self.stable.partitions {
            if p.is_empty() {
                continue;
            }
            let mut s = SearchStats::default();
            let found = p.search_filtered(&q, k, ef, &exclude, &mut s)?;
            stats.distance_evals += s.distance_evals;
            hits.extend(found);
        }
        let delta = self.delta_scan(&q, k, keep);
        stats.delta_scanned += view.live.len();
        stats.distance_evals += view.live.len();
        hits.extend(delta);
        hits.sort_by(hit_order);
        hits.dedup_by_key(|h| h.id);
        hits.truncate(k);
        let from_delta = hits
            .iter()
            .filter(|h| view.suppressed.contains(&h.id))
            .count();
        stats.delta_hits += from_delta;
        stats.stable_hits += hits.len() - from_delta;
        Ok(hits)
    }
}
