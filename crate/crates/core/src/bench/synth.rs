//! Synthetic knowledge graphs: preferential-attachment edges over nodes whose
//! embeddings come from per-modality Gaussian mixtures with planted labels.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BenchError, Dataset, EdgeRecord, NodeRecord};
use crate::graph::PropValue;
use crate::{Modality, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub modality: Modality,
    pub dim: usize,
    /// Mixture components, one per planted cluster.
    pub clusters: usize,
    /// Relative share of nodes.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes: usize,
    pub edges: usize,
    pub modalities: Vec<ModalitySpec>,
    /// Per-component standard deviation relative to unit-norm centers.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 1000,
            edges: 4000,
            modalities: vec![ModalitySpec {
                modality: Modality::Text,
                dim: 64,
                clusters: 2,
                share: 1.0,
            }],
            spread: 0.5,
            seed: 42,
        }
    }
}

const EDGE_TYPE: &str = "related";

pub fn generate_synthetic_kg(config: &SynthConfig) -> Result<Dataset, BenchError> {
    let n = config.nodes;
    let max_edges = n.saturating_mul(n.saturating_sub(1));
    if config.edges > max_edges {
        return Err(BenchError::Parameter(format!(
            "{} edges exceed the {max_edges} possible between {n} nodes",
            config.edges
        )));
    }
    if config.modalities.is_empty() {
        return Err(BenchError::Parameter(
            "at least one modality is required".into(),
        ));
    }
    for s in &config.modalities {
        if s.dim == 0 || s.clusters == 0 || !(s.share > 0.0 && s.share.is_finite()) {
            return Err(BenchError::Parameter(format!(
                "modality '{}' needs dim, clusters and share above zero",
                s.modality
            )));
        }
    }
    if !(config.spread >= 0.0 && config.spread.is_finite()) {
        return Err(BenchError::Parameter("spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let centers: Vec<Vec<Vec<f32>>> = config
        .modalities
        .iter()
        .map(|s| {
            (0..s.clusters)
                .map(|_| random_unit(&mut rng, s.dim))
                .collect()
        })
        .collect();

    let total_share: f64 = config.modalities.iter().map(|s| s.share).sum();
    let mut nodes = Vec::with_capacity(n);
    for id in 0..n {
        let mut pick = rng.random::<f64>() * total_share;
        let mut mi = config.modalities.len() - 1;
        for (i, s) in config.modalities.iter().enumerate() {
            if pick < s.share {
                mi = i;
                break;
            }
            pick -= s.share;
        }
        let spec = &config.modalities[mi];
        let cluster = rng.random_range(0..spec.clusters);
        let noise = Normal::new(0.0, config.spread / (spec.dim as f64).sqrt()).expect("finite");
        let embedding: Vec<f32> = centers[mi][cluster]
            .iter()
            .map(|&c| c + noise.sample(&mut rng) as f32)
            .collect();
        let mut properties = BTreeMap::new();
        properties.insert("cluster".to_string(), PropValue::Int(cluster as i64));
        nodes.push(NodeRecord {
            id: id as NodeId,
            labels: vec![format!("C{cluster}")],
            modality: spec.modality.clone(),
            embedding: Some(embedding),
            properties,
            cluster: Some(cluster),
        });
    }

    let edges = preferential_edges(&mut rng, n, config.edges);
    Ok(Dataset {
        modalities: config
            .modalities
            .iter()
            .map(|s| (s.modality.clone(), s.dim))
            .collect(),
        nodes,
        edges,
    })
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Sources are uniform; targets are drawn from an urn holding every node once
/// plus once per in-edge received.
fn preferential_edges(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<EdgeRecord> {
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut urn: Vec<usize> = (0..n).collect();
    let push = |rng: &mut ChaCha8Rng, s: usize, t: usize, out: &mut Vec<EdgeRecord>| {
        out.push(EdgeRecord {
            src: s as NodeId,
            dst: t as NodeId,
            edge_type: EDGE_TYPE.to_string(),
            weight: (rng.random_range(10..=100) as f64) / 100.0,
        });
    };
    let mut misses = 0usize;
    while out.len() < count && misses < 64 * count.max(1) {
        let s = rng.random_range(0..n);
        let t = urn[rng.random_range(0..urn.len())];
        if s == t || !seen.insert((s, t)) {
            misses += 1;
            continue;
        }
        urn.push(t);
        push(rng, s, t, &mut out);
    }
    if out.len() < count {
        // Dense request: fill from the pairs not yet used.
        let mut rest: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| (0..n).map(move |t| (s, t)))
            .filter(|&(s, t)| s != t && !seen.contains(&(s, t)))
            .collect();
        rest.shuffle(rng);
        for (s, t) in rest.into_iter().take(count - out.len()) {
            push(rng, s, t, &mut out);
        }
    }
    out
}
