//! Hybrid query DSL: parsing, cost-based planning, execution and fusion.

pub mod ast;
pub mod cost;
pub mod exec;
pub mod fusion;
pub mod parser;
pub mod planner;

use thiserror::Error;

pub use ast::{
    CmpOp, HybridQueryAst, MatchClause, Predicate, TraversalClause, VectorClause, VectorSource,
    Weights,
};
pub use cost::{estimate_cost, CostCoefficients, CostError, CostEstimate};
pub use exec::{
    execute, execute_at, execute_progressive, ExecContext, ExecStats, QueryOutput, Round,
};
pub use fusion::{fuse_score, FusedResult};
pub use parser::{parse, parse_with, ParseError};
pub use planner::{plan, plan_with, Catalog, HybridQueryPlan, PipelineOrder, PlanError};

use crate::delta::DeltaError;
use crate::NodeId;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Delta(#[from] DeltaError),
    #[error("parameter ${0} is not bound")]
    UnboundParameter(String),
    #[error("node {0} has no embedding")]
    UnknownNode(NodeId),
    #[error("query vector is zero after dimension adjustment")]
    ZeroVectorAfterAdjust,
    #[error("time budget too small to run a single round")]
    BudgetTooSmall,
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
}

/// Pads with zeros or truncates to `dim`, then renormalizes. A query that
/// already has `dim` components is returned unchanged.
pub fn adjust_dimension(query: &[f32], dim: usize) -> Result<Vec<f32>, QueryError> {
    if query.len() == dim {
        if crate::distance::normalized(query).is_none() {
            return Err(QueryError::ZeroVectorAfterAdjust);
        }
        return Ok(query.to_vec());
    }
    let mut v = query[..query.len().min(dim)].to_vec();
    v.resize(dim, 0.0);
    crate::distance::normalized(&v).ok_or(QueryError::ZeroVectorAfterAdjust)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_dimension_is_identity() {
        let q: Vec<f32> = (0..384).map(|i| i as f32 * 0.5 - 3.0).collect();
        assert_eq!(adjust_dimension(&q, 384).unwrap(), q);
    }

    #[test]
    fn pad_and_truncate() {
        let q: Vec<f32> = (0..128).map(|i| (i % 7) as f32 + 1.0).collect();
        let p = adjust_dimension(&q, 384).unwrap();
        assert_eq!(p.len(), 384);
        let n: f64 = p.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(p[128..].iter().all(|&x| x == 0.0));

        let q: Vec<f32> = (0..512).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
        let t = adjust_dimension(&q, 384).unwrap();
        let norm: f64 = q[..384]
            .iter()
            .map(|&x| (x as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        for i in 0..384 {
            assert!((t[i] as f64 - q[i] as f64 / norm).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_after_adjust() {
        let mut q = vec![0.0f32; 10];
        q[9] = 1.0;
        assert!(matches!(
            adjust_dimension(&q, 4),
            Err(QueryError::ZeroVectorAfterAdjust)
        ));
    }
}
