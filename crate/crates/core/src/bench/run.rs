//! Workload execution and metric aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truth::{ground_truth, ground_truth_cached};
use super::{BenchError, Dataset, EdgeRecord, NodeRecord, Workload, WorkloadQuery};
use crate::engine::{Engine, EngineConfig, QuantMode};
use crate::graph::Direction;
use crate::query::{
    HybridQueryAst, QueryOutput, TraversalClause, VectorClause, VectorSource, Weights,
};
use crate::{Modality, NodeId};

pub const CSV_SCHEMA_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Row label, e.g. the ablation name.
    pub system: String,
    pub dataset: String,
    pub engine: EngineConfig,
    /// Search breadth for every query; the index default when unset.
    pub ef: Option<usize>,
    /// Overrides the workload's trial count.
    pub trials: Option<usize>,
    /// Overrides the workload's worker count.
    pub concurrency: Option<usize>,
    /// Ground-truth cache location; computed in memory when unset.
    pub cache_dir: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(system: &str, dataset: &str, engine: EngineConfig) -> Self {
        Self {
            system: system.to_string(),
            dataset: dataset.to_string(),
            engine,
            ef: None,
            trials: None,
            concurrency: None,
            cache_dir: None,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub system: String,
    pub dataset: String,
    pub vectors: usize,
    pub queries: usize,
    pub k: usize,
    pub ef: Option<usize>,
    pub trials: usize,
    pub concurrency: usize,
    pub partitioning: bool,
    pub quant: String,
    pub fusion: bool,
    pub delta: bool,
    pub tuner: bool,
    pub recall_at_k: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub e2e_mean_ms: f64,
    pub e2e_p95_ms: f64,
    pub qps: f64,
    pub build_s: f64,
    pub memory_bytes: usize,
    pub embedding_bytes: usize,
    /// Unquantized payload at 4 bytes per component.
    pub fp32_bytes: usize,
    /// The same at 2 bytes per component.
    pub fp16_bytes: usize,
    pub delta_hit_rate: f64,
}

/// Differences of `self` minus a baseline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub recall_at_k: f64,
    pub mean_ms: f64,
    pub qps: f64,
    pub memory_bytes: i64,
}

impl MetricsReport {
    pub fn delta_vs(&self, baseline: &MetricsReport) -> AblationDelta {
        AblationDelta {
            recall_at_k: self.recall_at_k - baseline.recall_at_k,
            mean_ms: self.mean_ms - baseline.mean_ms,
            qps: self.qps - baseline.qps,
            memory_bytes: self.memory_bytes as i64 - baseline.memory_bytes as i64,
        }
    }
}

/// One executed query in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQuery {
    pub trial: usize,
    pub warmup: bool,
    pub query: usize,
    pub k: usize,
    pub hits: usize,
    pub truth: usize,
    pub recall: f64,
    pub engine_ms: f64,
    pub e2e_ms: f64,
    /// Returned ids, space separated.
    pub results: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub report: MetricsReport,
    pub per_query: Vec<PerQuery>,
    pub ground_truth_cache_hit: bool,
}

fn quant_name(q: QuantMode) -> &'static str {
    match q {
        QuantMode::Off => "off",
        QuantMode::B4 => "4",
        QuantMode::B8 => "8",
        QuantMode::B16 => "16",
        QuantMode::Adaptive => "adaptive",
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn query_ast(q: &WorkloadQuery, ef: Option<usize>, budget_ms: Option<u64>) -> HybridQueryAst {
    let source = match (&q.vector, q.node) {
        (Some(_), _) => VectorSource::Param("q".into()),
        (None, Some(id)) => VectorSource::Node(id),
        (None, None) => unreachable!("validated"),
    };
    HybridQueryAst {
        pattern: None,
        filters: Vec::new(),
        vector: VectorClause {
            modality: q.modality.clone(),
            source,
            k: q.k,
            ef,
        },
        traversal: (q.hops > 0).then_some(TraversalClause {
            hops: q.hops,
            edge_types: None,
            direction: Direction::Out,
        }),
        weights: Weights::normalized(q.weights.0, q.weights.1),
        budget_ms,
        top: q.k,
    }
}

fn query_vector<'a>(ds: &'a Dataset, q: &'a WorkloadQuery) -> Result<&'a [f32], BenchError> {
    match (&q.vector, q.node) {
        (Some(v), _) => Ok(v),
        (None, Some(id)) => ds
            .nodes
            .get(id as usize)
            .and_then(|n| n.embedding.as_deref())
            .ok_or_else(|| BenchError::Config(format!("seed node {id} has no embedding"))),
        (None, None) => Err(BenchError::Config("query without vector".into())),
    }
}

/// Target sets per query: explicit answers, else exact vector top-k over the
/// query's modality. The flag reports whether every lookup hit the cache.
fn targets(
    ds: &Dataset,
    workload: &Workload,
    cache_dir: Option<&Path>,
) -> Result<(Vec<Vec<NodeId>>, bool), BenchError> {
    let mut out: Vec<Vec<NodeId>> = vec![Vec::new(); workload.queries.len()];
    let mut groups: BTreeMap<(Modality, usize), Vec<usize>> = BTreeMap::new();
    for (i, q) in workload.queries.iter().enumerate() {
        match &q.expected {
            Some(e) => out[i] = e.clone(),
            None => groups.entry((q.modality.clone(), q.k)).or_default().push(i),
        }
    }
    let mut all_hit = true;
    for ((m, k), idx) in groups {
        let base = ds.vectors_of(&m);
        let qs: Vec<Vec<f32>> = idx
            .iter()
            .map(|&i| query_vector(ds, &workload.queries[i]).map(<[f32]>::to_vec))
            .collect::<Result<_, _>>()?;
        let lists = match cache_dir {
            Some(dir) => {
                let (l, hit) = ground_truth_cached(dir, &base, &qs, k)?;
                all_hit &= hit;
                l
            }
            None => {
                all_hit = false;
                ground_truth(&base, &qs, k)
            }
        };
        for (i, l) in idx.into_iter().zip(lists) {
            out[i] = l;
        }
    }
    Ok((out, all_hit))
}

fn score(results: &[NodeId], truth: &[NodeId], k: usize) -> (usize, usize, f64) {
    let t: BTreeSet<NodeId> = truth.iter().copied().collect();
    let hits = results.iter().take(k).filter(|id| t.contains(id)).count();
    let denom = k.min(truth.len());
    let recall = if denom == 0 {
        1.0
    } else {
        hits as f64 / denom as f64
    };
    (hits, denom, recall)
}

struct Executed {
    ids: Vec<NodeId>,
    engine: Duration,
    e2e: Duration,
    stable_hits: usize,
    delta_hits: usize,
}

fn execute_one(
    engine: &Engine,
    ds: &Dataset,
    q: &WorkloadQuery,
    ef: Option<usize>,
    budget_ms: Option<u64>,
) -> Result<Executed, BenchError> {
    let text = query_ast(q, ef, budget_ms).to_string();
    let mut params = BTreeMap::new();
    if q.vector.is_some() {
        params.insert("q".to_string(), query_vector(ds, q)?.to_vec());
    }
    let t0 = Instant::now();
    if let Some(b) = budget_ms {
        let round = engine.query_progressive(&text, &params, Duration::from_millis(b), |_| {})?;
        let e2e = t0.elapsed();
        return Ok(Executed {
            ids: round.results.iter().map(|r| r.id).collect(),
            engine: e2e,
            e2e,
            stable_hits: 0,
            delta_hits: 0,
        });
    }
    let ast = engine.parse(&text)?;
    let t1 = Instant::now();
    let out: QueryOutput = engine.execute(&ast, &params)?;
    let done = Instant::now();
    Ok(Executed {
        ids: out.results.iter().map(|r| r.id).collect(),
        engine: done - t1,
        e2e: done - t0,
        stable_hits: out.stats.vector.stable_hits,
        delta_hits: out.stats.vector.delta_hits,
    })
}

/// Builds the engine from `ds`, runs every trial of `workload` and
/// aggregates metrics over all trials but the first (when there are more
/// than one).
pub fn run_benchmark(
    ds: &Dataset,
    workload: &Workload,
    config: &BenchConfig,
) -> Result<BenchOutcome, BenchError> {
    workload.validate()?;
    let t = Instant::now();
    let engine = ds.load_into(config.engine)?;
    let build = t.elapsed();
    run_on_engine(&engine, ds, workload, config, build)
}

/// Runs `workload` against an already built engine.
pub fn run_on_engine(
    engine: &Engine,
    ds: &Dataset,
    workload: &Workload,
    config: &BenchConfig,
    build: Duration,
) -> Result<BenchOutcome, BenchError> {
    workload.validate()?;
    let trials = config.trials.unwrap_or(workload.trials);
    let workers = config.concurrency.unwrap_or(workload.concurrency);
    if trials < 1 || workers < 1 {
        return Err(BenchError::Config(
            "trials and concurrency must be at least 1".into(),
        ));
    }
    let (truth, cache_hit) = targets(ds, workload, config.cache_dir.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;

    let mut per_query = Vec::with_capacity(trials * workload.queries.len());
    let mut measured_wall = Duration::ZERO;
    let (mut stable_hits, mut delta_hits) = (0usize, 0usize);
    for trial in 0..trials {
        let warmup = trials > 1 && trial == 0;
        let start = Instant::now();
        let rows: Vec<(PerQuery, usize, usize)> = pool.install(|| {
            workload
                .queries
                .par_iter()
                .enumerate()
                .map(|(i, q)| {
                    let x = execute_one(engine, ds, q, config.ef, workload.budget_ms)?;
                    let (hits, denom, recall) = score(&x.ids, &truth[i], q.k);
                    let results: Vec<String> = x.ids.iter().map(|id| id.to_string()).collect();
                    Ok((
                        PerQuery {
                            trial,
                            warmup,
                            query: i,
                            k: q.k,
                            hits,
                            truth: denom,
                            recall,
                            engine_ms: ms(x.engine),
                            e2e_ms: ms(x.e2e),
                            results: results.join(" "),
                        },
                        x.stable_hits,
                        x.delta_hits,
                    ))
                })
                .collect::<Result<_, BenchError>>()
        })?;
        let wall = start.elapsed();
        if !warmup {
            measured_wall += wall;
        }
        for (row, s, d) in rows {
            if !warmup {
                stable_hits += s;
                delta_hits += d;
            }
            per_query.push(row);
        }
    }

    let measured: Vec<&PerQuery> = per_query.iter().filter(|r| !r.warmup).collect();
    let mut lat: Vec<f64> = measured.iter().map(|r| r.engine_ms).collect();
    let mut e2e: Vec<f64> = measured.iter().map(|r| r.e2e_ms).collect();
    lat.sort_by(f64::total_cmp);
    e2e.sort_by(f64::total_cmp);
    let recalls: Vec<f64> = measured.iter().map(|r| r.recall).collect();
    let mem = engine.memory_report();
    let components: usize = ds
        .nodes
        .iter()
        .filter_map(|n| n.embedding.as_ref().map(Vec::len))
        .sum();
    let cfg = &config.engine;
    let report = MetricsReport {
        schema_version: CSV_SCHEMA_VERSION,
        system: config.system.clone(),
        dataset: config.dataset.clone(),
        vectors: ds.nodes.iter().filter(|n| n.embedding.is_some()).count(),
        queries: workload.queries.len(),
        k: workload.queries.iter().map(|q| q.k).max().unwrap_or(0),
        ef: config.ef,
        trials,
        concurrency: workers,
        partitioning: cfg.partitioning,
        quant: quant_name(cfg.quant).to_string(),
        fusion: cfg.fusion,
        delta: cfg.delta,
        tuner: cfg.tuner,
        recall_at_k: mean(&recalls),
        mean_ms: mean(&lat),
        median_ms: percentile(&lat, 50.0),
        p95_ms: percentile(&lat, 95.0),
        p99_ms: percentile(&lat, 99.0),
        e2e_mean_ms: mean(&e2e),
        e2e_p95_ms: percentile(&e2e, 95.0),
        qps: if measured_wall.is_zero() {
            0.0
        } else {
            measured.len() as f64 / measured_wall.as_secs_f64()
        },
        build_s: build.as_secs_f64(),
        memory_bytes: mem.embedding_payload_bytes + mem.descriptor_bytes + mem.index_graph_bytes,
        embedding_bytes: mem.embedding_payload_bytes + mem.descriptor_bytes,
        fp32_bytes: 4 * components,
        fp16_bytes: 2 * components,
        delta_hit_rate: if stable_hits + delta_hits == 0 {
            0.0
        } else {
            delta_hits as f64 / (stable_hits + delta_hits) as f64
        },
    };
    Ok(BenchOutcome {
        report,
        per_query,
        ground_truth_cache_hit: cache_hit,
    })
}

fn open_csv(path: &Path) -> Result<(csv::Writer<std::fs::File>, bool), BenchError> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    Ok((w, fresh))
}

/// Appends rows, writing the header only into a new or empty file.
pub fn write_csv(path: &Path, rows: &[MetricsReport]) -> Result<(), BenchError> {
    let (mut w, _) = open_csv(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_per_query_csv(path: &Path, rows: &[PerQuery]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Share of staged writes by kind; normalized when used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnMix {
    pub insert: f64,
    pub update: f64,
    pub delete: f64,
}

impl Default for ChurnMix {
    fn default() -> Self {
        Self {
            insert: 1.0,
            update: 1.0,
            delete: 1.0,
        }
    }
}

impl ChurnMix {
    pub fn delete_only() -> Self {
        Self {
            insert: 0.0,
            update: 0.0,
            delete: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub bench: BenchConfig,
    /// Writes as a fraction of the initial vector count.
    pub churn: f64,
    pub mix: ChurnMix,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_ms(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        Self {
            count: xs.len(),
            mean_ms: mean(&xs),
            median_ms: percentile(&xs, 50.0),
            p95_ms: percentile(&xs, 95.0),
            p99_ms: percentile(&xs, 99.0),
            max_ms: xs.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub schema_version: u32,
    pub system: String,
    pub dataset: String,
    pub vectors: usize,
    pub churn: f64,
    pub inserts: usize,
    pub updates: usize,
    pub deletes: usize,
    #[serde(flatten)]
    pub staging: LatencySummary,
    pub interleaved_queries: usize,
    pub query_success_rate: f64,
    /// Results that named a node deleted before the query ran.
    pub deleted_violations: usize,
    /// Recall of the churned engine against exact top-k, before any vacuum.
    pub recall_hybrid: f64,
    /// Recall of an index rebuilt from the final vectors.
    pub recall_rebuilt: f64,
    /// `recall_hybrid / recall_rebuilt`.
    pub recall_ratio: f64,
}

impl UpdateReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), BenchError> {
        let (mut w, _) = open_csv(path)?;
        w.serialize(self)?;
        w.flush()?;
        Ok(())
    }
}

enum Op {
    Insert(Vec<f32>),
    Update(NodeId, Vec<f32>),
    Delete(NodeId),
}

/// Stages `churn × n` writes against a built engine while interleaving the
/// workload's queries, then compares recall with an index rebuilt from the
/// final state. Queries must carry explicit vectors.
pub fn run_update_benchmark(
    ds: &Dataset,
    workload: &Workload,
    config: &UpdateConfig,
) -> Result<UpdateReport, BenchError> {
    workload.validate()?;
    if !(0.0..=1.0).contains(&config.churn) {
        return Err(BenchError::Config("churn must lie in [0, 1]".into()));
    }
    let mix = config.mix;
    let mix_total = mix.insert + mix.update + mix.delete;
    if mix.insert < 0.0 || mix.update < 0.0 || mix.delete < 0.0 || mix_total <= 0.0 {
        return Err(BenchError::Config(
            "churn mix needs a positive share".into(),
        ));
    }
    if workload.queries.iter().any(|q| q.vector.is_none()) {
        return Err(BenchError::Config(
            "update benchmark queries need explicit vectors".into(),
        ));
    }
    let modality = match ds.modalities.as_slice() {
        [(m, _)] => m.clone(),
        _ => {
            return Err(BenchError::Config(
                "update benchmark needs a single-modality dataset".into(),
            ))
        }
    };
    let engine = ds.load_into(config.bench.engine)?;

    let mut state: Vec<Option<Vec<f32>>> = ds.nodes.iter().map(|n| n.embedding.clone()).collect();
    let mut live: Vec<NodeId> = ds
        .nodes
        .iter()
        .filter(|n| n.embedding.is_some())
        .map(|n| n.id)
        .collect();
    let initial = live.len();
    let writes = (config.churn * initial as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sigma = component_std(&state) * 0.25;
    let noise = Normal::new(0.0, sigma.max(1e-6)).expect("finite");
    let fresh = |rng: &mut ChaCha8Rng, live: &[NodeId], state: &[Option<Vec<f32>>]| {
        let base = state[live[rng.random_range(0..live.len())] as usize]
            .as_ref()
            .expect("live");
        base.iter()
            .map(|&x| x + noise.sample(rng) as f32)
            .collect::<Vec<f32>>()
    };

    let mut ops = Vec::with_capacity(writes);
    let mut shadow_live = live.clone();
    for _ in 0..writes {
        let r = rng.random::<f64>() * mix_total;
        let kind = if r < mix.insert || shadow_live.is_empty() {
            0
        } else if r < mix.insert + mix.update {
            1
        } else {
            2
        };
        if shadow_live.is_empty() && mix.insert == 0.0 {
            break;
        }
        match kind {
            0 => {
                let v = fresh(&mut rng, &live, &state);
                ops.push(Op::Insert(v));
            }
            1 => {
                let id = shadow_live[rng.random_range(0..shadow_live.len())];
                let v = fresh(&mut rng, &live, &state);
                ops.push(Op::Update(id, v));
            }
            _ => {
                let i = rng.random_range(0..shadow_live.len());
                let id = shadow_live.swap_remove(i);
                ops.push(Op::Delete(id));
            }
        }
    }

    let nq = workload.queries.len().max(1);
    let stride = if ops.is_empty() {
        usize::MAX
    } else {
        ops.len().div_ceil(nq).max(1)
    };
    let mut staging = Vec::with_capacity(ops.len());
    let (mut inserts, mut updates, mut deletes) = (0, 0, 0);
    let mut deleted: BTreeSet<NodeId> = BTreeSet::new();
    let (mut asked, mut ok, mut violations) = (0usize, 0usize, 0usize);
    let mut next_query = 0usize;
    for (i, op) in ops.into_iter().enumerate() {
        let t = Instant::now();
        match op {
            Op::Insert(v) => {
                let id = engine.add_node(
                    Vec::<String>::new(),
                    modality.clone(),
                    Some(&v),
                    BTreeMap::new(),
                )?;
                staging.push(ms(t.elapsed()));
                debug_assert_eq!(id as usize, state.len());
                state.push(Some(v));
                live.push(id);
                inserts += 1;
            }
            Op::Update(id, v) => {
                engine.update_embedding(id, &v)?;
                staging.push(ms(t.elapsed()));
                state[id as usize] = Some(v);
                updates += 1;
            }
            Op::Delete(id) => {
                engine.delete_node(id)?;
                staging.push(ms(t.elapsed()));
                state[id as usize] = None;
                if let Some(p) = live.iter().position(|&x| x == id) {
                    live.swap_remove(p);
                }
                deleted.insert(id);
                deletes += 1;
            }
        }
        if (i + 1) % stride == 0 {
            let q = &workload.queries[next_query % nq];
            next_query += 1;
            asked += 1;
            if let Ok(x) = execute_one(&engine, ds, q, config.bench.ef, None) {
                ok += 1;
                violations += x.ids.iter().filter(|id| deleted.contains(id)).count();
            }
        }
    }

    let final_ds = Dataset {
        modalities: ds.modalities.clone(),
        nodes: state
            .iter()
            .enumerate()
            .map(|(i, v)| NodeRecord {
                id: i as NodeId,
                labels: Vec::new(),
                modality: modality.clone(),
                embedding: v.clone(),
                properties: BTreeMap::new(),
                cluster: None,
            })
            .collect(),
        edges: Vec::new(),
    };
    let plain = Workload {
        queries: workload
            .queries
            .iter()
            .map(|q| WorkloadQuery {
                expected: None,
                ..q.clone()
            })
            .collect(),
        ..workload.clone()
    };
    let (truth, _) = targets(&final_ds, &plain, config.bench.cache_dir.as_deref())?;
    let measure = |engine: &Engine| -> Result<f64, BenchError> {
        let mut total = 0.0;
        for (q, t) in plain.queries.iter().zip(&truth) {
            let x = execute_one(engine, &final_ds, q, config.bench.ef, None)?;
            total += score(&x.ids, t, q.k).2;
        }
        Ok(total / plain.queries.len().max(1) as f64)
    };
    let recall_hybrid = measure(&engine)?;
    let rebuilt = final_ds.load_into(config.bench.engine)?;
    let recall_rebuilt = measure(&rebuilt)?;
    let recall_ratio = if recall_rebuilt > 0.0 {
        recall_hybrid / recall_rebuilt
    } else if recall_hybrid > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(UpdateReport {
        schema_version: CSV_SCHEMA_VERSION,
        system: config.bench.system.clone(),
        dataset: config.bench.dataset.clone(),
        vectors: initial,
        churn: config.churn,
        inserts,
        updates,
        deletes,
        staging: LatencySummary::from_ms(staging),
        interleaved_queries: asked,
        query_success_rate: if asked == 0 {
            1.0
        } else {
            ok as f64 / asked as f64
        },
        deleted_violations: violations,
        recall_hybrid,
        recall_rebuilt,
        recall_ratio,
    })
}

/// Mean per-component standard deviation over present vectors.
fn component_std(vs: &[Option<Vec<f32>>]) -> f64 {
    let present: Vec<&Vec<f32>> = vs.iter().flatten().collect();
    let Some(first) = present.first() else {
        return 0.0;
    };
    let d = first.len();
    let n = present.len() as f64;
    let mut sum = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    for v in &present {
        for (j, &x) in v.iter().enumerate() {
            sum[j] += x as f64;
            sq[j] += (x as f64) * (x as f64);
        }
    }
    (0..d)
        .map(|j| (sq[j] / n - (sum[j] / n).powi(2)).max(0.0).sqrt())
        .sum::<f64>()
        / d as f64
}

/// A knowledge-graph workload where the right answers are only reachable
/// through relations. Each query has an anchor node almost equal to the
/// query vector, `answers` unrelated-looking nodes linked from the anchor
/// with weight 1, and `decoys` nodes closer to the query than any answer but
/// without edges. Queries ask for the top 5 with one hop at weights 0.4/0.6.
pub fn decoy_workload(
    queries: usize,
    dim: usize,
    answers: usize,
    decoys: usize,
    seed: u64,
) -> (Dataset, Workload) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modality = Modality::Text;
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let n = Normal::new(0.0, 1.0).expect("finite");
        let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter().map(|x| (x / s) as f32).collect()
    };
    let near = |rng: &mut ChaCha8Rng, q: &[f32], scale: f64| -> Vec<f32> {
        let n = Normal::new(0.0, scale / (dim as f64).sqrt()).expect("finite");
        q.iter().map(|&x| x + n.sample(rng) as f32).collect()
    };
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut wq = Vec::with_capacity(queries);
    let add = |nodes: &mut Vec<NodeRecord>, v: Vec<f32>, label: &str| -> NodeId {
        let id = nodes.len() as NodeId;
        nodes.push(NodeRecord {
            id,
            labels: vec![label.to_string()],
            modality: modality.clone(),
            embedding: Some(v),
            properties: BTreeMap::new(),
            cluster: None,
        });
        id
    };
    for _ in 0..queries {
        let q = unit(&mut rng);
        let anchor = add(&mut nodes, near(&mut rng, &q, 0.01), "Anchor");
        let mut expected = Vec::with_capacity(answers);
        for _ in 0..answers {
            let a = add(&mut nodes, unit(&mut rng), "Answer");
            edges.push(EdgeRecord {
                src: anchor,
                dst: a,
                edge_type: "answers".into(),
                weight: 1.0,
            });
            expected.push(a);
        }
        for _ in 0..decoys {
            add(&mut nodes, near(&mut rng, &q, 0.3), "Decoy");
        }
        wq.push(WorkloadQuery {
            vector: Some(q),
            node: None,
            modality: modality.clone(),
            k: 5,
            hops: 1,
            weights: (0.4, 0.6),
            expected: Some(expected),
        });
    }
    let ds = Dataset {
        modalities: vec![(modality, dim)],
        nodes,
        edges,
    };
    let w = Workload {
        queries: wq,
        trials: 1,
        concurrency: 1,
        budget_ms: None,
    };
    (ds, w)
}

/// Mean recall over the measured rows of a per-query table.
pub fn recall_from_rows(rows: &[PerQuery]) -> f64 {
    let measured: Vec<f64> = rows
        .iter()
        .filter(|r| !r.warmup)
        .map(|r| r.recall)
        .collect();
    mean(&measured)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 50.0), 50.0);
        assert_eq!(percentile(&xs, 95.0), 95.0);
        assert_eq!(percentile(&xs, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn recall_is_hits_over_k() {
        assert_eq!(score(&[1, 2, 3], &[3, 4, 1], 3), (2, 3, 2.0 / 3.0));
        assert_eq!(score(&[1, 2, 3, 4], &[4], 3), (0, 1, 0.0));
    }
}
