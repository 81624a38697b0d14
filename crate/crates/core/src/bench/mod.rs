//! Benchmark harness: dataset loaders, a synthetic knowledge-graph
//! generator, exact ground truth and workload runners that emit CSV.

pub mod io;
pub mod run;
pub mod synth;
pub mod truth;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineConfig, EngineError};
use crate::graph::PropValue;
use crate::{Modality, NodeId};

pub use io::{
    load_bvecs, load_fvecs, load_graph_jsonl, load_ivecs, write_bvecs, write_fvecs,
    write_graph_jsonl,
};
pub use run::{
    decoy_workload, recall_from_rows, run_benchmark, run_on_engine, run_update_benchmark,
    write_csv, write_per_query_csv, BenchConfig, BenchOutcome, ChurnMix, LatencySummary,
    MetricsReport, PerQuery, UpdateConfig, UpdateReport, CSV_SCHEMA_VERSION,
};
pub use synth::{generate_synthetic_kg, ModalitySpec, SynthConfig};
pub use truth::{ground_truth, ground_truth_cached};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at byte offset {offset}")]
    MalformedRecord { offset: u64 },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    #[serde(default)]
    pub labels: Vec<String>,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, PropValue>,
    /// Planted mixture component, for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(rename = "type")]
    pub edge_type: String,
    pub weight: f64,
}

/// Nodes are stored in id order: `nodes[i].id == i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<(Modality, usize)>,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl Dataset {
    /// One unlabeled node per vector, all of one modality, no edges.
    pub fn from_vectors(modality: Modality, vectors: Vec<Vec<f32>>) -> Dataset {
        let dim = vectors.first().map_or(0, |v| v.len());
        let nodes = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| NodeRecord {
                id: i as NodeId,
                labels: Vec::new(),
                modality: modality.clone(),
                embedding: Some(v),
                properties: BTreeMap::new(),
                cluster: None,
            })
            .collect();
        Dataset {
            modalities: vec![(modality, dim)],
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Embedded nodes of `modality` as `(id, vector)`.
    pub fn vectors_of(&self, modality: &Modality) -> Vec<(NodeId, &[f32])> {
        self.nodes
            .iter()
            .filter(|n| &n.modality == modality)
            .filter_map(|n| n.embedding.as_deref().map(|e| (n.id, e)))
            .collect()
    }

    pub fn dim_of(&self, modality: &Modality) -> Option<usize> {
        self.modalities
            .iter()
            .find(|(m, _)| m == modality)
            .map(|(_, d)| *d)
    }

    /// Creates an engine, inserts everything and builds the indexes.
    pub fn load_into(&self, config: EngineConfig) -> Result<Engine, BenchError> {
        let engine = Engine::new(config);
        self.ingest_into(&engine)?;
        engine.build()?;
        Ok(engine)
    }

    /// Inserts every node and edge into an empty engine without building.
    pub fn ingest_into(&self, engine: &Engine) -> Result<(), BenchError> {
        for (m, d) in &self.modalities {
            engine.register_modality(m.clone(), *d)?;
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i as NodeId {
                return Err(BenchError::Parameter(format!(
                    "node ids must be dense and ordered; found {} at position {i}",
                    n.id
                )));
            }
            let id = engine.add_node(
                n.labels.iter().cloned(),
                n.modality.clone(),
                n.embedding.as_deref(),
                n.properties.clone(),
            )?;
            debug_assert_eq!(id, n.id);
        }
        for e in &self.edges {
            engine.add_edge(e.src, e.dst, &e.edge_type, e.weight)?;
        }
        Ok(())
    }
}

/// One benchmark query. Either `vector` or `node` supplies the query vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub modality: Modality,
    pub k: usize,
    #[serde(default)]
    pub hops: usize,
    #[serde(default = "default_weights")]
    pub weights: (f64, f64),
    /// Known correct answers; recall is measured against these instead of
    /// vector ground truth when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<NodeId>>,
}

fn default_weights() -> (f64, f64) {
    (0.5, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub queries: Vec<WorkloadQuery>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_ms: Option<u64>,
}

fn default_trials() -> usize {
    5
}

fn default_concurrency() -> usize {
    1
}

impl Workload {
    /// Pure vector queries, one per row of `queries`.
    pub fn vector_queries(modality: Modality, queries: Vec<Vec<f32>>, k: usize) -> Workload {
        Workload {
            queries: queries
                .into_iter()
                .map(|v| WorkloadQuery {
                    vector: Some(v),
                    node: None,
                    modality: modality.clone(),
                    k,
                    hops: 0,
                    weights: (1.0, 0.0),
                    expected: None,
                })
                .collect(),
            trials: default_trials(),
            concurrency: default_concurrency(),
            budget_ms: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials < 1 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.concurrency < 1 {
            return Err(BenchError::Config("concurrency must be at least 1".into()));
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.k < 1 {
                return Err(BenchError::Config(format!(
                    "query {i}: k must be at least 1"
                )));
            }
            if q.vector.is_none() && q.node.is_none() {
                return Err(BenchError::Config(format!(
                    "query {i}: no vector or node seed"
                )));
            }
            let (v, g) = q.weights;
            if v < 0.0 || g < 0.0 || v + g <= 0.0 {
                return Err(BenchError::Config(format!("query {i}: invalid weights")));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Workload, BenchError> {
        let text = std::fs::read_to_string(path)?;
        let w: Workload = serde_json::from_str(&text).map_err(|e| BenchError::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), BenchError> {
        std::fs::write(path, serde_json::to_vec(self).expect("plain data"))?;
        Ok(())
    }
}

/// Directory for cached ground truth and engine snapshots.
pub fn data_dir() -> PathBuf {
    std::env::var_os("HMGI_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".hmgi"))
}
