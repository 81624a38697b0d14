use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use super::ast::{HybridQueryAst, MatchClause, Predicate, VectorSource, Weights};
use super::fusion::{fuse_score, rank, FusedResult};
use super::planner::{HybridQueryPlan, PipelineOrder};
use super::{adjust_dimension, QueryError};
use crate::delta::{HybridStats, ReadSnapshot};
use crate::distance;
use crate::graph::{GraphNode, GraphStore};
use crate::{Modality, NodeId, PartitionId};

pub const DEFAULT_COMMUNITY_EPSILON: f64 = 0.1;
pub const PROGRESSIVE_BASE_EF: usize = 32;

/// Everything a query reads. One snapshot is pinned for the whole query.
pub struct ExecContext<'a> {
    pub graph: &'a GraphStore,
    pub snapshot: &'a ReadSnapshot,
    pub params: BTreeMap<String, Vec<f32>>,
    /// Enables the community boost when set.
    pub communities: Option<&'a BTreeMap<NodeId, usize>>,
    pub community_epsilon: f64,
    /// Restricts anchors to one modality when several share an index.
    pub modality_filter: Option<Modality>,
}

impl<'a> ExecContext<'a> {
    pub fn new(graph: &'a GraphStore, snapshot: &'a ReadSnapshot) -> Self {
        Self {
            graph,
            snapshot,
            params: BTreeMap::new(),
            communities: None,
            community_epsilon: DEFAULT_COMMUNITY_EPSILON,
            modality_filter: None,
        }
    }

    pub fn with_param(mut self, name: &str, v: Vec<f32>) -> Self {
        self.params.insert(name.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecStats {
    pub ef: Option<usize>,
    pub anchors: usize,
    pub reached: usize,
    pub w_v: f64,
    pub w_g: f64,
    pub vector: HybridStats,
    /// Partitions that contributed anchors.
    pub partitions: BTreeSet<PartitionId>,
    /// Vectors eligible for the vector stage before filtering.
    pub vectors_in_scope: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutput {
    pub results: Vec<FusedResult>,
    pub stats: ExecStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub results: Vec<FusedResult>,
    pub ef: usize,
    pub elapsed: Duration,
}

pub fn node_matches(
    node: &GraphNode,
    pattern: Option<&MatchClause>,
    filters: &[Predicate],
) -> bool {
    if let Some(m) = pattern {
        if let Some(l) = &m.label {
            if !node.labels.contains(l) {
                return false;
            }
        }
        for (k, v) in &m.properties {
            match node.properties.get(k) {
                Some(actual) if super::ast::CmpOp::Eq.holds(actual, v) => {}
                _ => return false,
            }
        }
    }
    filters.iter().all(|p| {
        node.properties
            .get(&p.property)
            .is_some_and(|actual| p.op.holds(actual, &p.value))
    })
}

fn query_vector(ast: &HybridQueryAst, ctx: &ExecContext<'_>) -> Result<Vec<f32>, QueryError> {
    let raw = match &ast.vector.source {
        VectorSource::Param(p) => ctx
            .params
            .get(p)
            .cloned()
            .ok_or_else(|| QueryError::UnboundParameter(p.clone()))?,
        VectorSource::Literal(v) => v.clone(),
        VectorSource::Node(id) => ctx
            .snapshot
            .vector(*id)
            .ok_or(QueryError::UnknownNode(*id))?,
    };
    let dim = ctx
        .snapshot
        .stable()
        .partitions()
        .first()
        .map_or(raw.len(), |p| p.dim());
    adjust_dimension(&raw, dim)
}

/// Runs the plan once at its own ef.
pub fn execute(plan: &HybridQueryPlan, ctx: &ExecContext<'_>) -> Result<QueryOutput, QueryError> {
    execute_at(plan, ctx, None)
}

/// Runs the plan with the vector-stage ef overridden.
pub fn execute_at(
    plan: &HybridQueryPlan,
    ctx: &ExecContext<'_>,
    ef: Option<usize>,
) -> Result<QueryOutput, QueryError> {
    let ast = &plan.ast;
    let q = query_vector(ast, ctx)?;
    let k = ast.vector.k;
    let filtered =
        ast.pattern.is_some() || !ast.filters.is_empty() || ctx.modality_filter.is_some();
    let keep = |id: NodeId| -> bool {
        if !filtered {
            return true;
        }
        let Some(node) = ctx.graph.node(id) else {
            return false;
        };
        if ctx
            .modality_filter
            .as_ref()
            .is_some_and(|m| &node.modality != m)
        {
            return false;
        }
        node_matches(node, ast.pattern.as_ref(), &ast.filters)
    };

    let mut stats = ExecStats {
        vectors_in_scope: ctx.snapshot.len(),
        ..Default::default()
    };
    let anchors: Vec<(NodeId, f64, Option<PartitionId>)> = match plan.order {
        PipelineOrder::VectorFirst => {
            let ef = ef.or(ast.vector.ef);
            stats.ef = ef;
            ctx.snapshot
                .hybrid_topk_filtered(&q, k, ef, &keep, &mut stats.vector)?
                .into_iter()
                .map(|h| (h.id, h.distance as f64, Some(h.partition)))
                .collect()
        }
        PipelineOrder::TraversalFirst => {
            let mut scored: Vec<(NodeId, f64, Option<PartitionId>)> = ctx
                .graph
                .nodes()
                .filter(|n| keep(n.id))
                .filter_map(|n| {
                    let v = ctx.snapshot.vector(n.id)?;
                    stats.vector.distance_evals += 1;
                    Some((
                        n.id,
                        distance::cosine_distance(&q, &v) as f64,
                        ctx.snapshot.partition_of(n.id),
                    ))
                })
                .collect();
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            scored.truncate(k);
            scored
        }
    };
    stats.anchors = anchors.len();
    stats.partitions = anchors.iter().filter_map(|a| a.2).collect();

    let (w_v, w_g) = match ast.weights {
        Weights::Fixed { v, g } => (v, g),
        Weights::Auto => {
            let v = anchors.len() as f64 / k as f64;
            (v, 1.0 - v)
        }
    };
    stats.w_v = w_v;
    stats.w_g = w_g;

    let community = |id: NodeId| ctx.communities.and_then(|c| c.get(&id).copied());
    let mut results: Vec<FusedResult> = anchors
        .iter()
        .map(|&(id, d, partition)| FusedResult {
            id,
            score: fuse_score(d, &[], w_v, w_g),
            d_v: d,
            hops: Vec::new(),
            community: community(id),
            partition,
        })
        .collect();

    let hops = ast.hops();
    if hops > 0 && w_g > 0.0 && !anchors.is_empty() {
        let t = ast
            .traversal
            .as_ref()
            .expect("hops imply a traversal clause");
        let types: Option<BTreeSet<String>> =
            t.edge_types.as_ref().map(|v| v.iter().cloned().collect());
        let seeds: Vec<NodeId> = anchors.iter().map(|a| a.0).collect();
        let reached = ctx
            .graph
            .traverse_khop(&seeds, hops, types.as_ref(), t.direction);
        stats.reached = reached.len();
        for r in reached {
            let mut hop_scores = r.hops;
            if let (Some(a), Some(b)) = (community(r.id), community(r.origin)) {
                if a == b {
                    for s in &mut hop_scores {
                        *s *= 1.0 + ctx.community_epsilon;
                    }
                }
            }
            results.push(FusedResult {
                id: r.id,
                score: fuse_score(1.0, &hop_scores, w_v, w_g),
                d_v: 1.0,
                hops: hop_scores,
                community: community(r.id),
                partition: None,
            });
        }
    }
    rank(&mut results);
    results.truncate(ast.top);
    Ok(QueryOutput { results, stats })
}

/// Anytime execution: reruns the plan at ef = 32, 64, ... until the budget
/// is spent or ef covers the largest partition, calling `emit` after every
/// round. Returns the last round.
pub fn execute_progressive(
    plan: &HybridQueryPlan,
    ctx: &ExecContext<'_>,
    budget: Duration,
    mut emit: impl FnMut(&Round),
) -> Result<Round, QueryError> {
    if budget.is_zero() {
        return Err(QueryError::BudgetTooSmall);
    }
    let start = Instant::now();
    let mut ef = PROGRESSIVE_BASE_EF;
    loop {
        let out = execute_at(plan, ctx, Some(ef))?;
        let round = Round {
            results: out.results,
            ef,
            elapsed: start.elapsed(),
        };
        emit(&round);
        let done = round.elapsed >= budget
            || ef >= plan.largest_partition
            || plan.order == PipelineOrder::TraversalFirst;
        if done {
            return Ok(round);
        }
        ef *= 2;
    }
}
