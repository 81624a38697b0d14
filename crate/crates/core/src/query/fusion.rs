use serde::{Deserialize, Serialize};

use crate::{NodeId, PartitionId};

/// `w_v (1 - d_v) + w_g mean(hop_scores)`; the graph term is 0 when there
/// are no hops.
pub fn fuse_score(d_v: f64, hop_scores: &[f64], w_v: f64, w_g: f64) -> f64 {
    let graph = if hop_scores.is_empty() {
        0.0
    } else {
        hop_scores.iter().sum::<f64>() / hop_scores.len() as f64
    };
    w_v * (1.0 - d_v) + w_g * graph
}

/// One ranked answer. `d_v` is 1 for nodes reached only by traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedResult {
    pub id: NodeId,
    #[serde(rename = "S")]
    pub score: f64,
    pub d_v: f64,
    pub hops: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub community: Option<usize>,
    #[serde(skip)]
    pub partition: Option<PartitionId>,
}

impl FusedResult {
    /// Recomputes the score from the stored components.
    pub fn rescore(&self, w_v: f64, w_g: f64) -> f64 {
        fuse_score(self.d_v, &self.hops, w_v, w_g)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }
}

/// Score descending, then id ascending.
pub fn rank(results: &mut [FusedResult]) {
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}
