use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{Adj, EmbeddingRef, GraphError, GraphNode, GraphStore, PropValue};
use crate::codec::{self, Dec, Enc, FileKind, SnapshotError};
use crate::{Modality, PartitionId};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

const SEC_REGISTRY: u32 = 1;
const SEC_NODES: u32 = 2;
const SEC_EDGE_TYPES: u32 = 3;
const SEC_FORWARD: u32 = 4;

fn corrupt(msg: &str) -> SnapshotError {
    SnapshotError::Corrupt(msg.to_string())
}

fn put_prop(e: &mut Enc, v: &PropValue) {
    match v {
        PropValue::Bool(b) => {
            e.u8(0);
            e.u8(*b as u8);
        }
        PropValue::Int(i) => {
            e.u8(1);
            e.i64(*i);
        }
        PropValue::Float(f) => {
            e.u8(2);
            e.f64(*f);
        }
        PropValue::Str(s) => {
            e.u8(3);
            e.str(s);
        }
    }
}

fn get_prop(d: &mut Dec<'_>) -> Result<PropValue, SnapshotError> {
    Ok(match d.u8()? {
        0 => PropValue::Bool(d.u8()? != 0),
        1 => PropValue::Int(d.i64()?),
        2 => PropValue::Float(d.f64()?),
        3 => PropValue::Str(d.str()?),
        _ => return Err(corrupt("property tag")),
    })
}

impl GraphStore {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut reg = Enc::new();
        reg.u64(self.registry.len() as u64);
        for (m, d) in self.registry.iter() {
            reg.str(m.as_str());
            reg.u64(d as u64);
        }

        let mut nodes = Enc::new();
        nodes.u64(self.nodes.len() as u64);
        for slot in &self.nodes {
            let Some(n) = slot else {
                nodes.u8(0);
                continue;
            };
            nodes.u8(1);
            nodes.str(n.modality.as_str());
            nodes.u64(n.labels.len() as u64);
            for l in &n.labels {
                nodes.str(l);
            }
            match n.embedding {
                Some(r) => {
                    nodes.u8(1);
                    nodes.u32(r.partition.0);
                    nodes.u64(r.slot);
                }
                None => nodes.u8(0),
            }
            nodes.u64(n.properties.len() as u64);
            for (k, v) in &n.properties {
                nodes.str(k);
                put_prop(&mut nodes, v);
            }
        }

        let mut types = Enc::new();
        types.u64(self.edge_types.len() as u64);
        for t in &self.edge_types {
            types.str(t);
        }

        let mut fwd = Enc::new();
        fwd.u64(self.forward.len() as u64);
        for list in &self.forward {
            fwd.u64(list.len() as u64);
            for a in list {
                fwd.u64(a.node);
                fwd.u32(a.edge_type);
                fwd.f64(a.weight);
            }
        }

        codec::encode_container(
            FileKind::Graph,
            GRAPH_FORMAT_VERSION,
            &[
                (SEC_REGISTRY, reg.finish()),
                (SEC_NODES, nodes.finish()),
                (SEC_EDGE_TYPES, types.finish()),
                (SEC_FORWARD, fwd.finish()),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        let sections = codec::decode_container(bytes, FileKind::Graph, GRAPH_FORMAT_VERSION)?;
        let mut g = GraphStore::new();

        let mut reg = Dec::new(codec::section(&sections, SEC_REGISTRY)?);
        for _ in 0..reg.count(12)? {
            let m: Modality = reg.str()?.as_str().into();
            let d = reg.u64()? as usize;
            if !g.registry.register(m, d) {
                return Err(corrupt("duplicate modality").into());
            }
        }
        reg.expect_end()?;

        let mut nd = Dec::new(codec::section(&sections, SEC_NODES)?);
        let n = nd.count(1)?;
        for id in 0..n as u64 {
            if nd.u8()? == 0 {
                g.nodes.push(None);
                continue;
            }
            let modality: Modality = nd.str()?.as_str().into();
            if !g.registry.contains(&modality) {
                return Err(corrupt("node modality not registered").into());
            }
            let mut labels = BTreeSet::new();
            for _ in 0..nd.count(4)? {
                labels.insert(nd.str()?);
            }
            let embedding = match nd.u8()? {
                0 => None,
                1 => Some(EmbeddingRef {
                    partition: PartitionId(nd.u32()?),
                    slot: nd.u64()?,
                }),
                _ => return Err(corrupt("embedding tag").into()),
            };
            let mut properties = BTreeMap::new();
            for _ in 0..nd.count(6)? {
                let k = nd.str()?;
                properties.insert(k, get_prop(&mut nd)?);
            }
            g.nodes.push(Some(GraphNode {
                id,
                labels,
                modality,
                embedding,
                properties,
            }));
            g.live += 1;
        }
        nd.expect_end()?;

        let mut ty = Dec::new(codec::section(&sections, SEC_EDGE_TYPES)?);
        for _ in 0..ty.count(4)? {
            let t = ty.str()?;
            if g.type_ids
                .insert(t.clone(), g.edge_types.len() as u32)
                .is_some()
            {
                return Err(corrupt("duplicate edge type").into());
            }
            g.edge_types.push(t);
        }
        ty.expect_end()?;

        let mut fw = Dec::new(codec::section(&sections, SEC_FORWARD)?);
        if fw.count(8)? != n {
            return Err(corrupt("adjacency table size").into());
        }
        g.forward = vec![Vec::new(); n];
        g.reverse = vec![Vec::new(); n];
        for src in 0..n {
            let deg = fw.count(20)?;
            for _ in 0..deg {
                let dst = fw.u64()?;
                let edge_type = fw.u32()?;
                let weight = fw.f64()?;
                let ok = g.contains(src as u64)
                    && g.contains(dst)
                    && (edge_type as usize) < g.edge_types.len()
                    && (0.0..=1.0).contains(&weight);
                if !ok {
                    return Err(corrupt("edge out of range").into());
                }
                let list = &g.forward[src];
                if list
                    .last()
                    .is_some_and(|a: &Adj| (a.node, a.edge_type) >= (dst, edge_type))
                {
                    return Err(corrupt("adjacency not sorted").into());
                }
                g.forward[src].push(Adj {
                    node: dst,
                    edge_type,
                    weight,
                });
                g.reverse[dst as usize].push(Adj {
                    node: src as u64,
                    edge_type,
                    weight,
                });
                g.edge_count += 1;
            }
        }
        fw.expect_end()?;
        Ok(g)
    }

    /// Writes a checksummed snapshot atomically.
    pub fn save_snapshot(&self, path: &Path) -> Result<(), GraphError> {
        codec::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, GraphError> {
        let bytes = fs::read(path).map_err(SnapshotError::from)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GraphStore {
        let mut g = GraphStore::new();
        g.register_modality(Modality::Text, 3).unwrap();
        g.register_modality(Modality::Other("lidar".into()), 2)
            .unwrap();
        let props = BTreeMap::from([
            ("year".to_string(), PropValue::Int(2024)),
            ("score".to_string(), PropValue::Float(0.5)),
            ("name".to_string(), PropValue::Str("x".into())),
            ("ok".to_string(), PropValue::Bool(true)),
        ]);
        g.add_node(
            ["Doc".to_string()],
            Modality::Text,
            Some(&[1.0, 0.0, 0.0]),
            props,
        )
        .unwrap();
        g.add_node(
            Vec::<String>::new(),
            Modality::Other("lidar".into()),
            None,
            BTreeMap::new(),
        )
        .unwrap();
        g.add_node(Vec::<String>::new(), Modality::Text, None, BTreeMap::new())
            .unwrap();
        g.add_edge(0, 1, "R", 0.25).unwrap();
        g.add_edge(0, 1, "S", 1.0).unwrap();
        g.add_edge(2, 0, "R", 0.0).unwrap();
        g.add_edge(2, 2, "R", 0.5).unwrap();
        g.remove_node(1).unwrap();
        g
    }

    #[test]
    fn round_trip() {
        let g = sample();
        let back = GraphStore::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.dump(), g.dump());
        assert!(back.check_symmetry());
    }

    #[test]
    fn empty_round_trip() {
        let g = GraphStore::new();
        assert_eq!(GraphStore::from_bytes(&g.to_bytes()).unwrap(), g);
    }

    #[test]
    fn damage_is_typed() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            assert!(matches!(
                GraphStore::from_bytes(&bytes[..cut]),
                Err(GraphError::Snapshot(
                    SnapshotError::FormatVersionMismatch { .. }
                        | SnapshotError::ChecksumMismatch(_)
                ))
            ));
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            GraphStore::from_bytes(&flipped),
            Err(GraphError::Snapshot(SnapshotError::ChecksumMismatch(_)))
        ));
    }
}
