use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CostCoefficients {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("cost model domain error: {0}")]
    Domain(String),
}

/// Query cost `alpha ln N + beta d h + gamma p ln(N / p)` with its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub cost: f64,
    pub search_term: f64,
    pub traversal_term: f64,
    pub partition_term: f64,
    pub n: u64,
    pub d: usize,
    pub h: usize,
    pub p: u64,
    pub coefficients: CostCoefficients,
}

pub fn estimate_cost(
    n: u64,
    d: usize,
    h: usize,
    p: u64,
    c: CostCoefficients,
) -> Result<CostEstimate, CostError> {
    if n < 1 {
        return Err(CostError::Domain("N must be at least 1".into()));
    }
    if d < 1 {
        return Err(CostError::Domain("d must be at least 1".into()));
    }
    if p < 1 || p > n {
        return Err(CostError::Domain(format!("p = {p} outside [1, {n}]")));
    }
    let nf = n as f64;
    let pf = p as f64;
    let search_term = c.alpha * nf.ln();
    let traversal_term = c.beta * (d as f64 * h as f64);
    let partition_term = c.gamma * pf * (nf / pf).ln();
    Ok(CostEstimate {
        cost: search_term + traversal_term + partition_term,
        search_term,
        traversal_term,
        partition_term,
        n,
        d,
        h,
        p,
        coefficients: c,
    })
}
