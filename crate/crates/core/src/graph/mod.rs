//! Property-graph storage: nodes with labels, properties and an optional
//! embedding reference; typed weighted edges kept in forward and reverse
//! adjacency lists sorted by neighbor id.

mod louvain;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::SnapshotError;
use crate::{Modality, ModalityRegistry, NodeId, PartitionId};

pub use louvain::{modularity, LouvainConfig};
pub use persist::GRAPH_FORMAT_VERSION;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("modality '{0}' is not registered")]
    UnknownModality(Modality),
    #[error("embedding has {found} components, modality expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("modality '{0}' is already registered with a different dimension")]
    ModalityConflict(Modality),
    #[error("edge endpoint {0} does not exist")]
    DanglingEndpoint(NodeId),
    #[error("edge weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// Scalar node property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl PropValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            PropValue::Int(i) => Some(*i as f64),
            PropValue::Float(f) => Some(*f),
            _ => None,
        }
    }
}

/// Where a node's embedding lives in the vector layer. The slot key is the
/// node id itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRef {
    pub partition: PartitionId,
    pub slot: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub labels: BTreeSet<String>,
    pub modality: Modality,
    pub embedding: Option<EmbeddingRef>,
    pub properties: BTreeMap<String, PropValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub edge_type: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Out,
    In,
    Both,
}

/// A node reached by traversal with the per-hop weights of its best path.
#[derive(Debug, Clone, PartialEq)]
pub struct Reached {
    pub id: NodeId,
    pub hops: Vec<f64>,
    /// The start node the best path begins at.
    pub origin: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Adj {
    node: NodeId,
    edge_type: u32,
    weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphStore {
    registry: ModalityRegistry,
    nodes: Vec<Option<GraphNode>>,
    live: usize,
    edge_types: Vec<String>,
    type_ids: HashMap<String, u32>,
    forward: Vec<Vec<Adj>>,
    reverse: Vec<Vec<Adj>>,
    edge_count: usize,
}

fn insert_sorted(list: &mut Vec<Adj>, adj: Adj) -> bool {
    match list.binary_search_by(|a| (a.node, a.edge_type).cmp(&(adj.node, adj.edge_type))) {
        Ok(i) => {
            list[i].weight = adj.weight;
            false
        }
        Err(i) => {
            list.insert(i, adj);
            true
        }
    }
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn registry(&self) -> &ModalityRegistry {
        &self.registry
    }

    pub fn register_modality(&mut self, modality: Modality, dim: usize) -> Result<(), GraphError> {
        if self.registry.register(modality.clone(), dim) {
            Ok(())
        } else {
            Err(GraphError::ModalityConflict(modality))
        }
    }

    pub fn node_count(&self) -> usize {
        self.live
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Next id that `add_node` will hand out.
    pub fn next_id(&self) -> NodeId {
        self.nodes.len() as NodeId
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.nodes.get(id as usize).and_then(Option::as_ref)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    /// Live nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter_map(Option::as_ref)
    }

    /// Checks an embedding against the modality registry.
    pub fn check_embedding(
        &self,
        modality: &Modality,
        embedding: &[f32],
    ) -> Result<(), GraphError> {
        let dim = self
            .registry
            .dimension(modality)
            .ok_or_else(|| GraphError::UnknownModality(modality.clone()))?;
        if embedding.len() != dim {
            return Err(GraphError::DimensionMismatch {
                expected: dim,
                found: embedding.len(),
            });
        }
        Ok(())
    }

    /// Adds a node and returns its fresh id. When an embedding is supplied
    /// the node gets an [`EmbeddingRef`] keyed by its own id; the vector
    /// itself belongs to the index layer.
    pub fn add_node(
        &mut self,
        labels: impl IntoIterator<Item = String>,
        modality: Modality,
        embedding: Option<&[f32]>,
        properties: BTreeMap<String, PropValue>,
    ) -> Result<NodeId, GraphError> {
        if !self.registry.contains(&modality) {
            return Err(GraphError::UnknownModality(modality));
        }
        if let Some(e) = embedding {
            self.check_embedding(&modality, e)?;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Some(GraphNode {
            id,
            labels: labels.into_iter().collect(),
            modality,
            embedding: embedding.map(|_| EmbeddingRef {
                partition: PartitionId::default(),
                slot: id,
            }),
            properties,
        }));
        self.forward.push(Vec::new());
        self.reverse.push(Vec::new());
        self.live += 1;
        Ok(id)
    }

    pub fn set_embedding_ref(
        &mut self,
        id: NodeId,
        r: Option<EmbeddingRef>,
    ) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id as usize)
            .and_then(Option::as_mut)
            .ok_or(GraphError::UnknownNode(id))?;
        node.embedding = r;
        Ok(())
    }

    pub fn set_property(
        &mut self,
        id: NodeId,
        key: &str,
        value: PropValue,
    ) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id as usize)
            .and_then(Option::as_mut)
            .ok_or(GraphError::UnknownNode(id))?;
        node.properties.insert(key.to_string(), value);
        Ok(())
    }

    /// Tombstones a node and drops its incident edges. The id is not reused.
    pub fn remove_node(&mut self, id: NodeId) -> Result<GraphNode, GraphError> {
        let node = self
            .nodes
            .get_mut(id as usize)
            .and_then(Option::take)
            .ok_or(GraphError::UnknownNode(id))?;
        let out = std::mem::take(&mut self.forward[id as usize]);
        let inc = std::mem::take(&mut self.reverse[id as usize]);
        for a in &out {
            self.reverse[a.node as usize].retain(|r| !(r.node == id && r.edge_type == a.edge_type));
        }
        for a in &inc {
            self.forward[a.node as usize].retain(|f| !(f.node == id && f.edge_type == a.edge_type));
        }
        // A self-loop appears in both lists but is one edge.
        let self_loops = out.iter().filter(|a| a.node == id).count();
        self.edge_count -= out.len() + inc.len() - self_loops;
        self.live -= 1;
        Ok(node)
    }

    fn intern(&mut self, edge_type: &str) -> u32 {
        if let Some(&t) = self.type_ids.get(edge_type) {
            return t;
        }
        let t = self.edge_types.len() as u32;
        self.edge_types.push(edge_type.to_string());
        self.type_ids.insert(edge_type.to_string(), t);
        t
    }

    /// Adds a typed edge. A second edge with the same `(src, dst, type)`
    /// replaces the weight; different types between one pair coexist.
    pub fn add_edge(
        &mut self,
        src: NodeId,
        dst: NodeId,
        edge_type: &str,
        weight: f64,
    ) -> Result<(), GraphError> {
        if !(weight.is_finite() && (0.0..=1.0).contains(&weight)) {
            return Err(GraphError::WeightOutOfRange(weight));
        }
        for end in [src, dst] {
            if !self.contains(end) {
                return Err(GraphError::DanglingEndpoint(end));
            }
        }
        let t = self.intern(edge_type);
        let new = insert_sorted(
            &mut self.forward[src as usize],
            Adj {
                node: dst,
                edge_type: t,
                weight,
            },
        );
        insert_sorted(
            &mut self.reverse[dst as usize],
            Adj {
                node: src,
                edge_type: t,
                weight,
            },
        );
        if new {
            self.edge_count += 1;
        }
        Ok(())
    }

    /// Out-neighbors as `(dst, edge_type, weight)`, sorted by dst.
    pub fn neighbors(&self, id: NodeId) -> Vec<(NodeId, &str, f64)> {
        self.adjacent(id, Direction::Out)
    }

    pub fn adjacent(&self, id: NodeId, direction: Direction) -> Vec<(NodeId, &str, f64)> {
        let mut out = Vec::new();
        let lists: &[&Vec<Vec<Adj>>] = match direction {
            Direction::Out => &[&self.forward],
            Direction::In => &[&self.reverse],
            Direction::Both => &[&self.forward, &self.reverse],
        };
        for list in lists {
            if let Some(adj) = list.get(id as usize) {
                out.extend(adj.iter().map(|a| {
                    (
                        a.node,
                        self.edge_types[a.edge_type as usize].as_str(),
                        a.weight,
                    )
                }));
            }
        }
        out
    }

    /// All edges in `(src, dst, type)` order.
    pub fn edges(&self) -> impl Iterator<Item = GraphEdge> + '_ {
        self.forward.iter().enumerate().flat_map(move |(src, adj)| {
            adj.iter().map(move |a| GraphEdge {
                src: src as NodeId,
                dst: a.node,
                edge_type: self.edge_types[a.edge_type as usize].clone(),
                weight: a.weight,
            })
        })
    }

    /// Layered breadth-first expansion up to `hops` hops. Every node is
    /// reported once, at its shortest hop distance from the start set, with
    /// the hop weights of its best path at that distance: highest mean
    /// weight, ties broken by the lexicographically smallest node-id path.
    /// Start nodes themselves are not reported. Results are in id order.
    pub fn traverse_khop(
        &self,
        start: &[NodeId],
        hops: usize,
        edge_filter: Option<&BTreeSet<String>>,
        direction: Direction,
    ) -> Vec<Reached> {
        #[derive(Clone)]
        struct Path {
            sum: f64,
            nodes: Vec<NodeId>,
            hops: Vec<f64>,
        }

        let allowed: Option<BTreeSet<u32>> = edge_filter.map(|f| {
            f.iter()
                .filter_map(|t| self.type_ids.get(t).copied())
                .collect()
        });
        let mut seen: HashMap<NodeId, ()> = HashMap::new();
        let mut frontier: BTreeMap<NodeId, Path> = BTreeMap::new();
        for &s in start {
            if self.contains(s) {
                seen.insert(s, ());
                frontier.insert(
                    s,
                    Path {
                        sum: 0.0,
                        nodes: vec![s],
                        hops: Vec::new(),
                    },
                );
            }
        }
        let lists: &[&Vec<Vec<Adj>>] = match direction {
            Direction::Out => &[&self.forward],
            Direction::In => &[&self.reverse],
            Direction::Both => &[&self.forward, &self.reverse],
        };
        let mut reached: Vec<Reached> = Vec::new();
        for _ in 0..hops {
            let mut next: BTreeMap<NodeId, Path> = BTreeMap::new();
            for path in frontier.values() {
                let u = *path.nodes.last().unwrap();
                for list in lists {
                    for a in &list[u as usize] {
                        if seen.contains_key(&a.node) {
                            continue;
                        }
                        if let Some(allowed) = &allowed {
                            if !allowed.contains(&a.edge_type) {
                                continue;
                            }
                        }
                        let sum = path.sum + a.weight;
                        let better = match next.get(&a.node) {
                            None => true,
                            Some(cur) => {
                                sum > cur.sum
                                    || (sum == cur.sum
                                        && path.nodes.iter().chain([&a.node]).lt(cur.nodes.iter()))
                            }
                        };
                        if better {
                            let mut nodes = path.nodes.clone();
                            nodes.push(a.node);
                            let mut hops = path.hops.clone();
                            hops.push(a.weight);
                            next.insert(a.node, Path { sum, nodes, hops });
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            for (&id, p) in &next {
                seen.insert(id, ());
                reached.push(Reached {
                    id,
                    hops: p.hops.clone(),
                    origin: p.nodes[0],
                });
            }
            frontier = next;
        }
        reached.sort_by_key(|r| r.id);
        reached
    }

    /// Louvain communities with the default configuration (ascending node
    /// order, no shuffling). Community ids are dense from 0.
    pub fn detect_communities(&self) -> BTreeMap<NodeId, usize> {
        self.detect_communities_with(&LouvainConfig::default())
    }

    pub fn detect_communities_with(&self, config: &LouvainConfig) -> BTreeMap<NodeId, usize> {
        louvain::detect(self, config)
    }

    /// Weighted undirected projection: `(node ids ascending, edge list over
    /// positions with summed weights)`. Self-loops are kept.
    pub(crate) fn undirected_projection(&self) -> (Vec<NodeId>, Vec<(usize, usize, f64)>) {
        let ids: Vec<NodeId> = self.nodes().map(|n| n.id).collect();
        let pos: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in self.edges() {
            let (a, b) = (pos[&e.src], pos[&e.dst]);
            *pairs.entry((a.min(b), a.max(b))).or_default() += e.weight;
        }
        (
            ids,
            pairs.into_iter().map(|((a, b), w)| (a, b, w)).collect(),
        )
    }

    /// Deterministic textual dump of every table, used for equality checks.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (m, d) in self.registry.iter() {
            let _ = writeln!(out, "modality {m} {d}");
        }
        let _ = writeln!(out, "next_id {}", self.next_id());
        for n in self.nodes() {
            let _ = writeln!(
                out,
                "node {} {:?} {} {:?} {:?}",
                n.id, n.labels, n.modality, n.embedding, n.properties
            );
        }
        for e in self.edges() {
            let _ = writeln!(
                out,
                "edge {} {} {} {}",
                e.src,
                e.dst,
                e.edge_type,
                e.weight.to_bits()
            );
        }
        out
    }

    /// Forward/reverse adjacency agreement.
    pub fn check_symmetry(&self) -> bool {
        for (src, adj) in self.forward.iter().enumerate() {
            for a in adj {
                let ok = self.reverse[a.node as usize].iter().any(|r| {
                    r.node == src as NodeId && r.edge_type == a.edge_type && r.weight == a.weight
                });
                if !ok {
                    return false;
                }
            }
        }
        let f: usize = self.forward.iter().map(Vec::len).sum();
        let r: usize = self.reverse.iter().map(Vec::len).sum();
        f == r && f == self.edge_count
    }
}
