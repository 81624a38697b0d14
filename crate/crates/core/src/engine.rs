//! The engine facade: one property graph plus one versioned, partitioned
//! vector index per modality, with query planning, optional tuning and
//! directory snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_checked_json, encode_checked_json, SnapshotError};
use crate::delta::{DeltaConfig, DeltaError, DeltaLog, VersionedIndex};
use crate::graph::{EmbeddingRef, GraphError, GraphStore, PropValue};
use crate::hnsw::{HnswIndex, HnswParams, IndexError};
use crate::partition::{check_rebalance, PartitionError, PartitionModel, WorkloadStats, DEFAULT_K};
use crate::quant::{select_bits, AdaptiveQuantizer, Bits, MemoryPolicy};
use crate::query::exec::node_matches;
use crate::query::{
    self, Catalog, CostCoefficients, ExecContext, HybridQueryAst, HybridQueryPlan, PipelineOrder,
    QueryError, QueryOutput, Round, Weights,
};
use crate::tuner::{QueryRecord, Tuner, TunerError, TunerModel, WorkloadFeatures};
use crate::{distance, Modality, NodeId};

pub const ENGINE_FORMAT_VERSION: u32 = 1;
const QUERY_WINDOW: usize = 1000;
/// Index key used for every modality when partitioning is off.
const SHARED_KEY: u16 = u16::MAX;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Delta(#[from] DeltaError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("modality '{0}' has unindexed embeddings; run build first")]
    NotBuilt(Modality),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Snapshot(SnapshotError::Io(e))
    }
}

impl From<serde_json::Error> for EngineError {
    fn from(e: serde_json::Error) -> Self {
        EngineError::Snapshot(SnapshotError::Corrupt(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Off,
    B4,
    B8,
    B16,
    /// Width chosen from memory pressure against `memory_budget_bytes`.
    Adaptive,
}

impl std::str::FromStr for QuantMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(QuantMode::Off),
            "4" => Ok(QuantMode::B4),
            "8" => Ok(QuantMode::B8),
            "16" => Ok(QuantMode::B16),
            "adaptive" => Ok(QuantMode::Adaptive),
            _ => Err(format!(
                "unknown quantization mode '{s}' (expected 4, 8, 16, off or adaptive)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// K-means clusters per modality.
    pub partitions: usize,
    /// Off: one shared index holds every modality (all must share a dimension).
    pub partitioning: bool,
    pub quant: QuantMode,
    pub memory_budget_bytes: Option<u64>,
    /// Off: graph weight forced to zero.
    pub fusion: bool,
    /// Off: every write is merged into the stable index immediately.
    pub delta: bool,
    pub tuner: bool,
    pub community_boost: bool,
    pub community_epsilon: f64,
    pub seed: u64,
    pub hnsw: HnswParams,
    pub delta_config: DeltaConfig,
    pub coefficients: CostCoefficients,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            partitions: DEFAULT_K,
            partitioning: true,
            quant: QuantMode::Off,
            memory_budget_bytes: None,
            fusion: true,
            delta: true,
            tuner: false,
            community_boost: false,
            community_epsilon: query::exec::DEFAULT_COMMUNITY_EPSILON,
            seed: 42,
            hnsw: HnswParams::default(),
            delta_config: DeltaConfig::default(),
            coefficients: CostCoefficients::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MemoryReport {
    pub embedding_payload_bytes: usize,
    pub descriptor_bytes: usize,
    pub index_graph_bytes: usize,
    pub vectors: usize,
}

struct IndexSlot {
    index: Arc<VersionedIndex>,
    workload: Mutex<WorkloadStats>,
}

pub struct Engine {
    config: EngineConfig,
    graph: RwLock<GraphStore>,
    indexes: RwLock<BTreeMap<u16, Arc<IndexSlot>>>,
    /// Embeddings added before the first build, per index key.
    pending: Mutex<BTreeMap<u16, Vec<(NodeId, Vec<f32>)>>>,
    tuner: Tuner,
    query_log: Mutex<Vec<QueryRecord>>,
    communities: RwLock<Option<Arc<BTreeMap<NodeId, usize>>>>,
    adaptive: Mutex<AdaptiveQuantizer>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("nodes", &self.graph.read().node_count())
            .field("indexes", &self.indexes.read().len())
            .finish()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    key: u16,
    dim: usize,
    ordinal: u16,
    epoch: u64,
    merged_upto: u64,
    partitions: usize,
    delta_records: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: EngineConfig,
    indexes: Vec<IndexMeta>,
    pending: Vec<(u16, Vec<(NodeId, Vec<f32>)>)>,
    tuner: bool,
}

fn initial_bits(config: &EngineConfig, raw_bytes: u64) -> Bits {
    match config.quant {
        QuantMode::Off => Bits::Raw,
        QuantMode::B4 => Bits::B4,
        QuantMode::B8 => Bits::B8,
        QuantMode::B16 => Bits::B16,
        QuantMode::Adaptive => {
            let load = config
                .memory_budget_bytes
                .map_or(0.0, |b| raw_bytes as f64 / b.max(1) as f64);
            select_bits(&MemoryPolicy::default(), load)
        }
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let start = initial_bits(&config, 0);
        Self {
            config,
            graph: RwLock::new(GraphStore::new()),
            indexes: RwLock::new(BTreeMap::new()),
            pending: Mutex::new(BTreeMap::new()),
            tuner: Tuner::new(),
            query_log: Mutex::new(Vec::new()),
            communities: RwLock::new(None),
            adaptive: Mutex::new(AdaptiveQuantizer::new(MemoryPolicy::default(), start)),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn graph(&self) -> parking_lot::RwLockReadGuard<'_, GraphStore> {
        self.graph.read()
    }

    pub fn tuner(&self) -> &Tuner {
        &self.tuner
    }

    pub fn register_modality(&self, modality: Modality, dim: usize) -> Result<(), EngineError> {
        let mut g = self.graph.write();
        if !self.config.partitioning {
            if let Some((m, d)) = g.registry().iter().find(|(_, d)| *d != dim) {
                return Err(EngineError::Config(format!(
                    "a shared index needs one dimension; '{m}' has {d}, '{modality}' has {dim}"
                )));
            }
        }
        g.register_modality(modality, dim)?;
        Ok(())
    }

    fn key_of(&self, g: &GraphStore, modality: &Modality) -> Result<u16, EngineError> {
        if !self.config.partitioning {
            return Ok(SHARED_KEY);
        }
        g.registry()
            .ordinal(modality)
            .ok_or_else(|| EngineError::Graph(GraphError::UnknownModality(modality.clone())))
    }

    fn slot(&self, key: u16) -> Option<Arc<IndexSlot>> {
        self.indexes.read().get(&key).cloned()
    }

    /// The versioned index serving `modality`, once built.
    pub fn index(&self, modality: &Modality) -> Option<Arc<VersionedIndex>> {
        let key = self.key_of(&self.graph.read(), modality).ok()?;
        self.slot(key).map(|s| s.index.clone())
    }

    pub fn add_node(
        &self,
        labels: impl IntoIterator<Item = String>,
        modality: Modality,
        embedding: Option<&[f32]>,
        properties: BTreeMap<String, PropValue>,
    ) -> Result<NodeId, EngineError> {
        let mut g = self.graph.write();
        let key = self.key_of(&g, &modality)?;
        if let Some(e) = embedding {
            g.check_embedding(&modality, e)?;
            if distance::normalized(e).is_none() {
                return Err(DeltaError::ZeroVector.into());
            }
        }
        let id = g.add_node(labels, modality, embedding, properties)?;
        if let Some(e) = embedding {
            match self.slot(key) {
                Some(slot) => {
                    slot.index.insert(id, e)?;
                    let partition = slot.index.snapshot().partition_of(id).unwrap_or_default();
                    g.set_embedding_ref(
                        id,
                        Some(EmbeddingRef {
                            partition,
                            slot: id,
                        }),
                    )?;
                    drop(g);
                    self.after_write(&slot)?;
                }
                None => self
                    .pending
                    .lock()
                    .entry(key)
                    .or_default()
                    .push((id, e.to_vec())),
            }
        }
        Ok(id)
    }

    pub fn add_edge(
        &self,
        src: NodeId,
        dst: NodeId,
        edge_type: &str,
        weight: f64,
    ) -> Result<(), EngineError> {
        self.graph.write().add_edge(src, dst, edge_type, weight)?;
        Ok(())
    }

    pub fn set_property(&self, id: NodeId, key: &str, value: PropValue) -> Result<(), EngineError> {
        self.graph.write().set_property(id, key, value)?;
        Ok(())
    }

    pub fn update_embedding(&self, id: NodeId, embedding: &[f32]) -> Result<(), EngineError> {
        let (key, slot) = {
            let g = self.graph.read();
            let node = g.node(id).ok_or(GraphError::UnknownNode(id))?;
            g.check_embedding(&node.modality, embedding)?;
            let key = self.key_of(&g, &node.modality)?;
            (key, self.slot(key))
        };
        match slot {
            Some(slot) => {
                slot.index.update(id, embedding)?;
                self.after_write(&slot)?;
            }
            None => {
                let mut pending = self.pending.lock();
                let list = pending.entry(key).or_default();
                match list.iter_mut().find(|(i, _)| *i == id) {
                    Some(entry) => entry.1 = embedding.to_vec(),
                    None => return Err(DeltaError::UnknownId(id).into()),
                }
            }
        }
        Ok(())
    }

    pub fn delete_node(&self, id: NodeId) -> Result<(), EngineError> {
        let mut g = self.graph.write();
        let node = g.node(id).ok_or(GraphError::UnknownNode(id))?.clone();
        let key = self.key_of(&g, &node.modality)?;
        if node.embedding.is_some() {
            match self.slot(key) {
                Some(slot) => {
                    slot.index.delete(id)?;
                    g.remove_node(id)?;
                    drop(g);
                    self.after_write(&slot)?;
                    return Ok(());
                }
                None => {
                    if let Some(list) = self.pending.lock().get_mut(&key) {
                        list.retain(|(i, _)| *i != id);
                    }
                }
            }
        }
        g.remove_node(id)?;
        Ok(())
    }

    fn after_write(&self, slot: &IndexSlot) -> Result<(), EngineError> {
        if !self.config.delta {
            slot.index.vacuum(usize::MAX)?;
        }
        Ok(())
    }

    /// Builds (or rebuilds) every modality's partitions from all current
    /// embeddings.
    pub fn build(&self) -> Result<(), EngineError> {
        let g = self.graph.read();
        let mut keys: BTreeMap<u16, (Modality, usize)> = BTreeMap::new();
        for (m, d) in g.registry().iter() {
            keys.entry(self.key_of(&g, m)?).or_insert((m.clone(), d));
        }
        drop(g);
        let mut pending = std::mem::take(&mut *self.pending.lock());
        for (key, (modality, dim)) in keys {
            let mut items: Vec<(NodeId, Vec<f32>)> = match self.slot(key) {
                Some(s) => s.index.snapshot().logical_vectors(),
                None => Vec::new(),
            };
            items.extend(pending.remove(&key).unwrap_or_default());
            items.sort_by_key(|(id, _)| *id);
            let slot = self.build_index(key, &modality, dim, &items)?;
            let snap = slot.index.snapshot();
            {
                let mut g = self.graph.write();
                for (id, _) in &items {
                    if let Some(partition) = snap.partition_of(*id) {
                        g.set_embedding_ref(
                            *id,
                            Some(EmbeddingRef {
                                partition,
                                slot: *id,
                            }),
                        )?;
                    }
                }
            }
            self.indexes.write().insert(key, slot);
        }
        Ok(())
    }

    fn build_index(
        &self,
        key: u16,
        modality: &Modality,
        dim: usize,
        items: &[(NodeId, Vec<f32>)],
    ) -> Result<Arc<IndexSlot>, EngineError> {
        let k = if self.config.partitioning {
            self.config.partitions.max(1).min(items.len().max(1))
        } else {
            1
        };
        let model = if k <= 1 || items.is_empty() {
            PartitionModel::single(modality.clone(), dim)
        } else {
            let sample: Vec<&[f32]> = items.iter().map(|(_, v)| v.as_slice()).collect();
            PartitionModel::fit(modality.clone(), &sample, k, self.config.seed)?
        };
        let mut params = self.config.hnsw.with_seed(self.config.seed);
        if self.config.tuner {
            let sample: Vec<&[f32]> = items
                .iter()
                .take(crate::tuner::FEATURE_SAMPLE)
                .map(|(_, v)| v.as_slice())
                .collect();
            let f = WorkloadFeatures::extract(
                sample,
                dim,
                items.len() / k.max(1),
                &self.query_log.lock(),
            );
            let p = self.tuner.predict(&f);
            if !p.fallback {
                params = HnswParams::new(p.m, params.ef_construction.max(p.m), params.ef_search)
                    .with_seed(params.seed);
            }
        }
        let raw = (items.len() * dim * 4) as u64;
        let bits = initial_bits(&self.config, raw);
        let ordinal = if key == SHARED_KEY { 0 } else { key };
        let index =
            VersionedIndex::new(dim, model, params, bits, ordinal, self.config.delta_config)?;
        index.bulk_load(items)?;
        Ok(Arc::new(IndexSlot {
            workload: Mutex::new(WorkloadStats::new(
                index.stable().partitions().len(),
                QUERY_WINDOW,
            )),
            index: Arc::new(index),
        }))
    }

    /// Merges every index's delta now.
    pub fn vacuum(&self) -> Result<(), EngineError> {
        let slots: Vec<Arc<IndexSlot>> = self.indexes.read().values().cloned().collect();
        for s in slots {
            s.index.vacuum(usize::MAX)?;
        }
        Ok(())
    }

    pub fn detect_communities(&self) -> Arc<BTreeMap<NodeId, usize>> {
        let c = Arc::new(self.graph.read().detect_communities());
        *self.communities.write() = Some(c.clone());
        c
    }

    pub fn parse(&self, text: &str) -> Result<HybridQueryAst, EngineError> {
        let g = self.graph.read();
        Ok(query::parse_with(text, Some(g.registry())).map_err(QueryError::from)?)
    }

    fn catalog(&self, g: &GraphStore, ast: &HybridQueryAst) -> Result<Catalog, EngineError> {
        let m = &ast.vector.modality;
        let dim = g
            .registry()
            .dimension(m)
            .ok_or_else(|| QueryError::UnknownModality(m.to_string()))?;
        let key = self.key_of(g, m)?;
        let mut sizes: Vec<usize> = Vec::new();
        if let Some(slot) = self.slot(key) {
            let snap = slot.index.snapshot();
            sizes = snap.stable().partitions().iter().map(|p| p.len()).collect();
            let delta = snap.delta_records();
            if let Some(max) = sizes.iter_mut().max() {
                *max += delta;
            }
        }
        let seed_count = ast.binds_seeds().then(|| {
            g.nodes()
                .filter(|n| n.embedding.is_some() && &n.modality == m)
                .filter(|n| node_matches(n, ast.pattern.as_ref(), &ast.filters))
                .count()
        });
        let nodes = g.node_count().max(1);
        Ok(Catalog {
            partition_sizes: sizes,
            dim,
            avg_degree: g.edge_count() as f64 / nodes as f64,
            seed_count,
        })
    }

    /// Applies the engine's ablation switches to a parsed query.
    fn effective_ast(&self, ast: &HybridQueryAst) -> HybridQueryAst {
        let mut ast = ast.clone();
        if !self.config.fusion {
            ast.weights = Weights::Fixed { v: 1.0, g: 0.0 };
        }
        ast
    }

    pub fn plan(&self, ast: &HybridQueryAst) -> Result<HybridQueryPlan, EngineError> {
        self.plan_with(ast, None)
    }

    pub fn plan_with(
        &self,
        ast: &HybridQueryAst,
        order: Option<PipelineOrder>,
    ) -> Result<HybridQueryPlan, EngineError> {
        let g = self.graph.read();
        let catalog = self.catalog(&g, ast)?;
        let ast = self.effective_ast(ast);
        Ok(
            query::plan_with(&ast, &catalog, self.config.coefficients, order)
                .map_err(QueryError::from)?,
        )
    }

    pub fn explain(&self, text: &str) -> Result<String, EngineError> {
        let ast = self.parse(text)?;
        Ok(self.plan(&ast)?.explain())
    }

    fn tuned_ef(&self, slot: &IndexSlot, ast: &HybridQueryAst) -> Option<usize> {
        if ast.vector.ef.is_some() || !self.config.tuner {
            return None;
        }
        let model = self.tuner.model()?;
        let stable = slot.index.stable();
        let largest = stable.partitions().iter().max_by_key(|p| p.len())?;
        let f = WorkloadFeatures::from_index(largest, &self.query_log.lock());
        Some(model.predict(&f).ef)
    }

    fn record_query(&self, params: &BTreeMap<String, Vec<f32>>, ast: &HybridQueryAst) {
        let norm = match &ast.vector.source {
            query::VectorSource::Param(p) => {
                params.get(p).map_or(0.0, |v| distance::norm(v) as f64)
            }
            query::VectorSource::Literal(v) => distance::norm(v) as f64,
            query::VectorSource::Node(_) => 1.0,
        };
        let mut log = self.query_log.lock();
        if log.len() >= QUERY_WINDOW {
            log.remove(0);
        }
        log.push(QueryRecord {
            norm,
            k: ast.vector.k,
        });
    }

    fn with_context<T>(
        &self,
        plan: &HybridQueryPlan,
        params: &BTreeMap<String, Vec<f32>>,
        f: impl FnOnce(&ExecContext<'_>, &IndexSlot) -> Result<T, QueryError>,
    ) -> Result<T, EngineError> {
        let g = self.graph.read();
        let m = &plan.ast.vector.modality;
        let key = self.key_of(&g, m)?;
        if self.pending.lock().get(&key).is_some_and(|p| !p.is_empty()) {
            return Err(EngineError::NotBuilt(m.clone()));
        }
        let slot = self
            .slot(key)
            .ok_or_else(|| EngineError::NotBuilt(m.clone()))?;
        let snapshot = slot.index.snapshot();
        let communities = self.communities.read().clone();
        let mut ctx = ExecContext::new(&g, &snapshot);
        ctx.params = params.clone();
        ctx.community_epsilon = self.config.community_epsilon;
        if self.config.community_boost {
            ctx.communities = communities.as_deref();
        }
        if !self.config.partitioning {
            ctx.modality_filter = Some(m.clone());
        }
        Ok(f(&ctx, &slot)?)
    }

    /// Plans and runs a parsed query.
    pub fn execute(
        &self,
        ast: &HybridQueryAst,
        params: &BTreeMap<String, Vec<f32>>,
    ) -> Result<QueryOutput, EngineError> {
        let plan = self.plan(ast)?;
        self.execute_plan(&plan, params)
    }

    pub fn execute_plan(
        &self,
        plan: &HybridQueryPlan,
        params: &BTreeMap<String, Vec<f32>>,
    ) -> Result<QueryOutput, EngineError> {
        self.record_query(params, &plan.ast);
        let out = self.with_context(plan, params, |ctx, slot| {
            let ef = self.tuned_ef(slot, &plan.ast);
            let out = query::execute_at(plan, ctx, ef)?;
            let mut w = slot.workload.lock();
            for p in &out.stats.partitions {
                w.record(p.cluster(), 0.0);
            }
            Ok(out)
        })?;
        Ok(out)
    }

    /// Parses, plans and runs query text.
    pub fn query(
        &self,
        text: &str,
        params: &BTreeMap<String, Vec<f32>>,
    ) -> Result<QueryOutput, EngineError> {
        let ast = self.parse(text)?;
        self.execute(&ast, params)
    }

    pub fn query_progressive(
        &self,
        text: &str,
        params: &BTreeMap<String, Vec<f32>>,
        budget: Duration,
        emit: impl FnMut(&Round),
    ) -> Result<Round, EngineError> {
        let ast = self.parse(text)?;
        let plan = self.plan(&ast)?;
        self.with_context(&plan, params, |ctx, _| {
            query::execute_progressive(&plan, ctx, budget, emit)
        })
    }

    /// Refits a modality's partitions when query hits are skewed beyond
    /// `threshold` (max over mean). Returns the number of moved embeddings.
    pub fn rebalance(&self, modality: &Modality, threshold: f64) -> Result<usize, EngineError> {
        let key = self.key_of(&self.graph.read(), modality)?;
        let Some(slot) = self.slot(key) else {
            return Ok(0);
        };
        let stats = slot.workload.lock().clone();
        let population = slot.index.snapshot().logical_vectors();
        let refs: Vec<(NodeId, &[f32])> = population
            .iter()
            .map(|(id, v)| (*id, v.as_slice()))
            .collect();
        let model = slot.index.model();
        match check_rebalance(&model, &stats, threshold, &refs, self.config.seed) {
            Some(plan) => {
                let moved = slot.index.apply_repartition(&plan)?;
                *slot.workload.lock() = WorkloadStats::new(model.k(), QUERY_WINDOW);
                Ok(moved)
            }
            None => Ok(0),
        }
    }

    /// Feeds a memory-pressure probe to the adaptive quantizer and
    /// requantizes every partition when the width changes.
    pub fn probe_memory(&self, load: f64) -> Result<Option<Bits>, EngineError> {
        if self.config.quant != QuantMode::Adaptive {
            return Ok(None);
        }
        let change = self.adaptive.lock().observe(load);
        if let Some(bits) = change {
            for s in self.indexes.read().values() {
                s.index.requantize_all(bits)?;
            }
        }
        Ok(change)
    }

    pub fn memory_report(&self) -> MemoryReport {
        let mut r = MemoryReport::default();
        for s in self.indexes.read().values() {
            for p in s.index.stable().partitions() {
                let (payload, desc) = p.embedding_bytes();
                r.embedding_payload_bytes += payload;
                r.descriptor_bytes += desc;
                r.index_graph_bytes += p.graph_bytes();
                r.vectors += p.len();
            }
        }
        r
    }

    /// Writes the graph, every index with its unmerged delta, the tuner
    /// model and a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        fs::create_dir_all(dir)?;
        let g = self.graph.read();
        g.save_snapshot(&dir.join("graph.hmgi"))?;
        let mut metas = Vec::new();
        for (&key, slot) in self.indexes.read().iter() {
            let idx_dir = dir.join(format!("index-{key}"));
            fs::create_dir_all(&idx_dir)?;
            let stable = slot.index.stable();
            for (c, p) in stable.partitions().iter().enumerate() {
                p.save(&idx_dir.join(format!("part-{c}.hmgi")))?;
            }
            crate::codec::write_atomic(
                &idx_dir.join("model.json"),
                &encode_checked_json(&slot.index.model().to_json()),
            )?;
            let log_path = idx_dir.join("delta.log");
            let _ = fs::remove_file(&log_path);
            let (mut log, _) = DeltaLog::open(&log_path)?;
            let pending = slot.index.pending_records();
            log.rewrite(&pending)?;
            metas.push(IndexMeta {
                key,
                dim: slot.index.dim(),
                ordinal: slot.index.modality_ordinal(),
                epoch: stable.epoch(),
                merged_upto: stable.merged_upto(),
                partitions: stable.partitions().len(),
                delta_records: pending.len(),
            });
        }
        let tuner = match self.tuner.model() {
            Some(m) => {
                m.save(&dir.join("tuner.forest"))?;
                true
            }
            None => false,
        };
        let manifest = Manifest {
            format_version: ENGINE_FORMAT_VERSION,
            config: self.config,
            indexes: metas,
            pending: self
                .pending
                .lock()
                .iter()
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
            tuner,
        };
        crate::codec::write_atomic(
            &dir.join("engine.json"),
            &encode_checked_json(&serde_json::to_string(&manifest)?),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EngineError> {
        let bytes = fs::read(dir.join("engine.json"))?;
        let manifest: Manifest = serde_json::from_str(decode_checked_json(&bytes)?)?;
        if manifest.format_version != ENGINE_FORMAT_VERSION {
            return Err(SnapshotError::FormatVersionMismatch {
                expected: ENGINE_FORMAT_VERSION,
                found: Some(manifest.format_version),
            }
            .into());
        }
        let engine = Engine::new(manifest.config);
        *engine.graph.write() = GraphStore::load_snapshot(&dir.join("graph.hmgi"))?;
        for meta in &manifest.indexes {
            let idx_dir = dir.join(format!("index-{}", meta.key));
            let bytes = fs::read(idx_dir.join("model.json"))?;
            let model = PartitionModel::from_json(decode_checked_json(&bytes)?)?;
            let parts = (0..meta.partitions)
                .map(|c| HnswIndex::load(&idx_dir.join(format!("part-{c}.hmgi"))))
                .collect::<Result<Vec<_>, _>>()?;
            let index = VersionedIndex::from_stable(
                meta.dim,
                model,
                parts,
                meta.epoch,
                meta.merged_upto,
                meta.ordinal,
                manifest.config.delta_config,
            )?;
            let records = DeltaLog::read(&idx_dir.join("delta.log"))?;
            if records.len() != meta.delta_records {
                return Err(SnapshotError::Corrupt(format!(
                    "delta log holds {} intact records, manifest lists {}",
                    records.len(),
                    meta.delta_records
                ))
                .into());
            }
            index.replay(&records)?;
            let k = index.stable().partitions().len();
            engine.indexes.write().insert(
                meta.key,
                Arc::new(IndexSlot {
                    index: Arc::new(index),
                    workload: Mutex::new(WorkloadStats::new(k, QUERY_WINDOW)),
                }),
            );
        }
        *engine.pending.lock() = manifest.pending.into_iter().collect();
        if manifest.tuner {
            engine
                .tuner
                .install(TunerModel::load(&dir.join("tuner.forest"))?);
        }
        Ok(engine)
    }

    /// Ids with embeddings in `modality`, in id order.
    pub fn embedded_ids(&self, modality: &Modality) -> BTreeSet<NodeId> {
        self.graph
            .read()
            .nodes()
            .filter(|n| n.embedding.is_some() && &n.modality == modality)
            .map(|n| n.id)
            .collect()
    }
}
