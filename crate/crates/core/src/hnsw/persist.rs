use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::store::VectorStore;
use super::{HnswIndex, HnswParams, IndexError};
use crate::codec::{self, Dec, Enc, FileKind, SnapshotError};
use crate::quant::Bits;
use crate::PartitionId;

pub const INDEX_FORMAT_VERSION: u32 = 1;

const SEC_HEADER: u32 = 1;
const SEC_PARAMS: u32 = 2;
const SEC_QUANT: u32 = 3;
const SEC_VECTORS: u32 = 4;
const SEC_IDS: u32 = 5;
const SEC_LEVELS: u32 = 6;
const SEC_TOMBSTONES: u32 = 7;
const SEC_LAYER_BASE: u32 = 100;

fn corrupt(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::Corrupt(msg.into())
}

impl HnswIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections = Vec::new();

        let mut h = Enc::new();
        h.u32(self.store.dim as u32);
        h.u32(self.partition.0);
        h.u64(self.ids.len() as u64);
        h.u64(self.entry.map_or(u64::MAX, u64::from));
        h.u32(self.max_level as u32);
        sections.push((SEC_HEADER, h.finish()));

        let mut p = Enc::new();
        p.u64(self.params.m as u64);
        p.u64(self.params.ef_construction as u64);
        p.u64(self.params.ef_search as u64);
        p.f64(self.params.level_mult);
        p.u64(self.params.seed);
        sections.push((SEC_PARAMS, p.finish()));

        let mut q = Enc::new();
        q.u32(self.store.bits.width());
        q.u64(self.store.descs.len() as u64);
        for &(min, max) in &self.store.descs {
            q.f32(min);
            q.f32(max);
        }
        sections.push((SEC_QUANT, q.finish()));

        let mut v = Enc::new();
        match self.store.bits {
            Bits::Raw => {
                v.u64(self.store.raw.len() as u64);
                for &x in &self.store.raw {
                    v.f32(x);
                }
            }
            _ => {
                v.u64(self.store.codes.len() as u64);
                v.bytes(&self.store.codes);
            }
        }
        sections.push((SEC_VECTORS, v.finish()));

        let mut ids = Enc::new();
        ids.u64(self.ids.len() as u64);
        for &id in &self.ids {
            ids.u64(id);
        }
        sections.push((SEC_IDS, ids.finish()));

        let mut lv = Enc::new();
        lv.bytes(&self.levels);
        sections.push((SEC_LEVELS, lv.finish()));

        let mut t = Enc::new();
        t.u64(self.tombstones.len() as u64);
        for &w in &self.tombstones {
            t.u64(w);
        }
        sections.push((SEC_TOMBSTONES, t.finish()));

        let top = self.levels.iter().copied().max().unwrap_or(0) as usize;
        for level in 0..=top {
            if self.ids.is_empty() {
                break;
            }
            let mut layer = Enc::new();
            let members: Vec<usize> = (0..self.ids.len())
                .filter(|&s| self.levels[s] as usize >= level)
                .collect();
            layer.u64(members.len() as u64);
            for s in members {
                let list = &self.links[s][level];
                layer.u32(s as u32);
                layer.u32(list.len() as u32);
                for &n in list {
                    layer.u32(n);
                }
            }
            sections.push((SEC_LAYER_BASE + level as u32, layer.finish()));
        }

        codec::encode_container(FileKind::Index, INDEX_FORMAT_VERSION, &sections)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let sections = codec::decode_container(bytes, FileKind::Index, INDEX_FORMAT_VERSION)?;

        let mut h = Dec::new(codec::section(&sections, SEC_HEADER)?);
        let dim = h.u32()? as usize;
        let partition = PartitionId(h.u32()?);
        let slots = h.u64()? as usize;
        let entry = match h.u64()? {
            u64::MAX => None,
            e => Some(e as u32),
        };
        let max_level = h.u32()? as usize;

        let mut p = Dec::new(codec::section(&sections, SEC_PARAMS)?);
        let params = HnswParams {
            m: p.u64()? as usize,
            ef_construction: p.u64()? as usize,
            ef_search: p.u64()? as usize,
            level_mult: p.f64()?,
            seed: p.u64()?,
        };
        params.validate()?;

        let mut q = Dec::new(codec::section(&sections, SEC_QUANT)?);
        let bits = Bits::from_width(q.u32()?).ok_or_else(|| corrupt("unknown bit width"))?;
        let ndesc = q.count(8)?;
        let mut descs = Vec::with_capacity(ndesc);
        for _ in 0..ndesc {
            descs.push((q.f32()?, q.f32()?));
        }

        let mut store = VectorStore::new(dim, bits);
        let mut v = Dec::new(codec::section(&sections, SEC_VECTORS)?);
        match bits {
            Bits::Raw => {
                let n = v.count(4)?;
                if n != slots * dim {
                    return Err(corrupt("vector block size").into());
                }
                store.raw = (0..n).map(|_| v.f32()).collect::<Result<_, _>>()?;
            }
            _ => {
                let n = v.count(1)?;
                if n != slots * bits.payload_bytes(dim) || descs.len() != slots {
                    return Err(corrupt("code block size").into());
                }
                store.codes = v.bytes(n)?.to_vec();
                store.descs = descs;
            }
        }
        store.len = slots;
        let mut scratch = vec![0.0; dim];
        store.norms = (0..slots)
            .map(|s| crate::distance::norm(store.vector(s, &mut scratch)))
            .collect();

        let mut d = Dec::new(codec::section(&sections, SEC_IDS)?);
        let n = d.count(8)?;
        if n != slots {
            return Err(corrupt("id table size").into());
        }
        let ids: Vec<u64> = (0..n).map(|_| d.u64()).collect::<Result<_, _>>()?;

        let levels = codec::section(&sections, SEC_LEVELS)?.to_vec();
        if levels.len() != slots {
            return Err(corrupt("level table size").into());
        }

        let mut t = Dec::new(codec::section(&sections, SEC_TOMBSTONES)?);
        let nt = t.count(8)?;
        let tombstones: Vec<u64> = (0..nt).map(|_| t.u64()).collect::<Result<_, _>>()?;

        let mut links: Vec<Vec<Vec<u32>>> = levels
            .iter()
            .map(|&l| vec![Vec::new(); l as usize + 1])
            .collect();
        let top = levels.iter().copied().max().unwrap_or(0) as usize;
        for level in 0..=top {
            if slots == 0 {
                break;
            }
            let mut layer = Dec::new(codec::section(&sections, SEC_LAYER_BASE + level as u32)?);
            let members = layer.count(8)?;
            for _ in 0..members {
                let s = layer.u32()? as usize;
                let deg = layer.u32()? as usize;
                if s >= slots || (levels[s] as usize) < level || deg > layer.remaining() / 4 {
                    return Err(corrupt("layer entry out of range").into());
                }
                let list: Vec<u32> = (0..deg).map(|_| layer.u32()).collect::<Result<_, _>>()?;
                if list.iter().any(|&n| n as usize >= slots) {
                    return Err(corrupt("neighbor out of range").into());
                }
                links[s][level] = list;
            }
        }

        let mut index = HnswIndex {
            params,
            partition,
            store,
            ids,
            slot_of: HashMap::new(),
            levels,
            links,
            tombstones,
            entry,
            max_level,
        };
        for slot in 0..slots {
            if !index.is_deleted(slot as u32) {
                index.slot_of.insert(index.ids[slot], slot as u32);
            }
        }
        if index.entry.is_some_and(|e| e as usize >= slots) {
            return Err(corrupt("entry point out of range").into());
        }
        index.validate().map_err(corrupt)?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        codec::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(SnapshotError::from)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NodeId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(bits: Bits) -> HnswIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = HnswIndex::new(8, HnswParams::new(6, 24, 24), bits).unwrap();
        for id in 0..300 as NodeId {
            let v: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            idx.insert(id, &v).unwrap();
        }
        for id in (0..300).step_by(7) {
            idx.remove(id).unwrap();
        }
        idx.with_partition(PartitionId(5))
    }

    #[test]
    fn round_trip_all_widths() {
        for bits in [Bits::Raw, Bits::B4, Bits::B8, Bits::B16] {
            let idx = sample(bits);
            let bytes = idx.to_bytes();
            let back = HnswIndex::from_bytes(&bytes).unwrap();
            assert_eq!(back, idx);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn empty_round_trip() {
        let idx = HnswIndex::new(4, HnswParams::new(4, 8, 8), Bits::Raw).unwrap();
        let back = HnswIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn truncation_never_panics() {
        let bytes = sample(Bits::B8).to_bytes();
        for cut in (0..bytes.len()).step_by(97) {
            match HnswIndex::from_bytes(&bytes[..cut]) {
                Err(IndexError::Snapshot(
                    SnapshotError::FormatVersionMismatch { .. }
                    | SnapshotError::ChecksumMismatch(_),
                )) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }
}
