use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::HybridQueryAst;
use super::cost::{estimate_cost, CostCoefficients, CostError, CostEstimate};

/// What the planner needs to know about the live store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    /// Vector counts of the partitions the query's modality is searched in.
    pub partition_sizes: Vec<usize>,
    pub dim: usize,
    pub avg_degree: f64,
    /// Number of nodes matching MATCH/WHERE, when they bind a seed set.
    pub seed_count: Option<usize>,
}

impl Catalog {
    pub fn total(&self) -> usize {
        self.partition_sizes.iter().sum()
    }

    pub fn largest_partition(&self) -> usize {
        self.partition_sizes.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineOrder {
    /// Filtered ANN for anchors, then k-hop expansion.
    VectorFirst,
    /// Enumerate pattern matches, rerank exactly by distance, then expand.
    TraversalFirst,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unplannable query: {0}")]
    Unplannable(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridQueryPlan {
    pub ast: HybridQueryAst,
    pub order: PipelineOrder,
    pub vector_first: CostEstimate,
    pub traversal_first: Option<CostEstimate>,
    pub largest_partition: usize,
}

impl HybridQueryPlan {
    pub fn cost(&self) -> &CostEstimate {
        match self.order {
            PipelineOrder::VectorFirst => &self.vector_first,
            PipelineOrder::TraversalFirst => self.traversal_first.as_ref().expect("costed"),
        }
    }

    pub fn stages(&self) -> Vec<&'static str> {
        let mut s = match self.order {
            PipelineOrder::VectorFirst => vec!["ann"],
            PipelineOrder::TraversalFirst => vec!["match", "rerank"],
        };
        if self.ast.hops() > 0 {
            s.extend(["traverse", "fuse"]);
        }
        s
    }

    pub fn explain(&self) -> String {
        let mut out = String::new();
        let order = match self.order {
            PipelineOrder::VectorFirst => "vector-first",
            PipelineOrder::TraversalFirst => "traversal-first",
        };
        let _ = writeln!(out, "query: {}", self.ast);
        let _ = writeln!(out, "plan: {order} ({})", self.stages().join(" -> "));
        let _ = writeln!(out, "  vector-first     {}", describe(&self.vector_first));
        match &self.traversal_first {
            Some(c) => {
                let _ = writeln!(out, "  traversal-first  {}", describe(c));
            }
            None => {
                let _ = writeln!(out, "  traversal-first  not applicable (no seed binding)");
            }
        }
        let c = &self.vector_first.coefficients;
        let _ = writeln!(
            out,
            "  coefficients     alpha={} beta={} gamma={}",
            c.alpha, c.beta, c.gamma
        );
        out
    }
}

fn describe(c: &CostEstimate) -> String {
    format!(
        "C={:.4} = {:.4} [alpha ln N, N={}] + {:.4} [beta d h, d={} h={}] + {:.4} [gamma p ln(N/p), p={}]",
        c.cost, c.search_term, c.n, c.traversal_term, c.d, c.h, c.partition_term, c.p
    )
}

fn vector_first_cost(
    ast: &HybridQueryAst,
    catalog: &Catalog,
    coeffs: CostCoefficients,
) -> Result<CostEstimate, CostError> {
    let n = catalog.total().max(1) as u64;
    let p = (catalog
        .partition_sizes
        .iter()
        .filter(|&&s| s > 0)
        .count()
        .max(1) as u64)
        .min(n);
    estimate_cost(n, catalog.dim.max(1), ast.hops(), p, coeffs)
}

fn traversal_first_cost(
    ast: &HybridQueryAst,
    catalog: &Catalog,
    seeds: usize,
    coeffs: CostCoefficients,
) -> Result<CostEstimate, CostError> {
    let expansion = (1.0 + catalog.avg_degree.max(0.0)).powi(ast.hops() as i32);
    let n = (seeds.max(1) as f64 * expansion)
        .ceil()
        .min(u64::MAX as f64) as u64;
    estimate_cost(n.max(1), catalog.dim.max(1), ast.hops(), 1, coeffs)
}

/// Costs both pipeline orders and picks the cheaper; ties go to vector-first.
pub fn plan(
    ast: &HybridQueryAst,
    catalog: &Catalog,
    coeffs: CostCoefficients,
) -> Result<HybridQueryPlan, PlanError> {
    plan_with(ast, catalog, coeffs, None)
}

/// Like [`plan`], optionally forcing an order.
pub fn plan_with(
    ast: &HybridQueryAst,
    catalog: &Catalog,
    coeffs: CostCoefficients,
    force: Option<PipelineOrder>,
) -> Result<HybridQueryPlan, PlanError> {
    let vector_first = vector_first_cost(ast, catalog, coeffs)?;
    let traversal_first = match (ast.binds_seeds(), catalog.seed_count) {
        (true, Some(m)) => Some(traversal_first_cost(ast, catalog, m, coeffs)?),
        _ => None,
    };
    let order = match force {
        Some(PipelineOrder::TraversalFirst) if traversal_first.is_none() => {
            return Err(PlanError::Unplannable(
                "traversal-first needs MATCH or WHERE to bind a seed set".into(),
            ));
        }
        Some(o) => o,
        None => match &traversal_first {
            Some(t) if t.cost < vector_first.cost => PipelineOrder::TraversalFirst,
            _ => PipelineOrder::VectorFirst,
        },
    };
    Ok(HybridQueryPlan {
        ast: ast.clone(),
        order,
        vector_first,
        traversal_first,
        largest_partition: catalog.largest_partition(),
    })
}
