//! Hybrid graph + vector index engine.
//!
//! A property graph whose nodes carry modality-tagged embeddings, indexed by
//! per-modality, K-means-partitioned HNSW graphs. Writes go through an MVCC
//! delta store that is searched exactly next to the stable indexes and merged
//! in the background. Queries combine ANN hits and k-hop traversal with a
//! weighted score fusion, planned with an analytic cost model.

pub mod bench;
pub mod codec;
pub mod delta;
pub mod distance;
pub mod engine;
pub mod graph;
pub mod hnsw;
pub mod modality;
pub mod partition;
pub mod quant;
pub mod query;
pub mod tuner;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use modality::{Modality, ModalityRegistry};

/// Append-only 64-bit node identifier; never reused after deletion.
pub type NodeId = u64;

/// Globally unique partition id: the modality ordinal in the high 16 bits,
/// the K-means cluster within that modality in the low 16.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PartitionId(pub u32);

impl PartitionId {
    pub fn new(modality_ordinal: u16, cluster: u16) -> Self {
        PartitionId(((modality_ordinal as u32) << 16) | cluster as u32)
    }

    pub fn modality_ordinal(self) -> u16 {
        (self.0 >> 16) as u16
    }

    pub fn cluster(self) -> u16 {
        (self.0 & 0xffff) as u16
    }
}

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.modality_ordinal(), self.cluster())
    }
}
