use crate::quant::{self, Bits, QuantDescriptor};

/// Slot-addressed contiguous vector storage, either raw `f32` or packed
/// fixed-point codes with a per-vector descriptor.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VectorStore {
    pub(crate) dim: usize,
    pub(crate) bits: Bits,
    pub(crate) raw: Vec<f32>,
    pub(crate) codes: Vec<u8>,
    pub(crate) descs: Vec<(f32, f32)>,
    /// Norm of each vector as decoded for search; derived, never persisted.
    pub(crate) norms: Vec<f32>,
    pub(crate) len: usize,
}

impl VectorStore {
    pub(crate) fn new(dim: usize, bits: Bits) -> Self {
        Self {
            dim,
            bits,
            raw: Vec::new(),
            codes: Vec::new(),
            descs: Vec::new(),
            norms: Vec::new(),
            len: 0,
        }
    }

    fn stride(&self) -> usize {
        self.bits.payload_bytes(self.dim)
    }

    pub(crate) fn push(&mut self, v: &[f32]) {
        debug_assert_eq!(v.len(), self.dim);
        match self.bits {
            Bits::Raw => self.raw.extend_from_slice(v),
            bits => {
                let (codes, desc) =
                    quant::quantize(v, bits).expect("ingest rejects non-finite vectors");
                quant::pack(&codes, bits, &mut self.codes);
                self.descs.push((desc.min, desc.max));
            }
        }
        self.len += 1;
        self.refresh_norm(self.len - 1);
    }

    /// Appends `other`'s slot verbatim (no re-encoding).
    pub(crate) fn push_from(&mut self, other: &VectorStore, slot: usize) {
        debug_assert_eq!((self.dim, self.bits), (other.dim, other.bits));
        match self.bits {
            Bits::Raw => self
                .raw
                .extend_from_slice(&other.raw[slot * self.dim..(slot + 1) * self.dim]),
            _ => {
                let s = self.stride();
                self.codes
                    .extend_from_slice(&other.codes[slot * s..(slot + 1) * s]);
                self.descs.push(other.descs[slot]);
            }
        }
        self.norms.push(other.norms[slot]);
        self.len += 1;
    }

    fn refresh_norm(&mut self, slot: usize) {
        let mut buf = vec![0.0; self.dim];
        let n = crate::distance::norm(self.vector(slot, &mut buf));
        if slot < self.norms.len() {
            self.norms[slot] = n;
        } else {
            self.norms.push(n);
        }
    }

    pub(crate) fn descriptor(&self, slot: usize) -> Option<QuantDescriptor> {
        match self.bits {
            Bits::Raw => None,
            bits => {
                let (min, max) = self.descs[slot];
                Some(QuantDescriptor { bits, min, max })
            }
        }
    }

    /// Returns the vector at `slot`, decoding into `scratch` when quantized.
    #[inline]
    pub(crate) fn vector<'a>(&'a self, slot: usize, scratch: &'a mut [f32]) -> &'a [f32] {
        match self.bits {
            Bits::Raw => &self.raw[slot * self.dim..(slot + 1) * self.dim],
            _ => {
                let s = self.stride();
                let desc = self.descriptor(slot).unwrap();
                quant::decode_packed_fast(
                    &self.codes[slot * s..(slot + 1) * s],
                    &desc,
                    self.dim,
                    scratch,
                );
                &scratch[..self.dim]
            }
        }
    }

    /// Vector at `slot` scaled to unit norm (as the search kernels see it).
    pub(crate) fn unit_vector(&self, slot: usize) -> Vec<f32> {
        let mut buf = vec![0.0; self.dim];
        let n = self.norms[slot];
        let v = self.vector(slot, &mut buf).to_vec();
        if n > 0.0 {
            v.into_iter().map(|x| x / n).collect()
        } else {
            v
        }
    }

    /// Re-encodes every vector at `bits`, going through the current decoding.
    pub(crate) fn requantize(&mut self, bits: Bits) {
        if bits == self.bits {
            return;
        }
        let mut next = VectorStore::new(self.dim, bits);
        let mut buf = vec![0.0; self.dim];
        for slot in 0..self.len {
            let v = self.vector(slot, &mut buf).to_vec();
            next.push(&v);
        }
        *self = next;
    }

    pub(crate) fn payload_bytes(&self) -> usize {
        self.len * self.bits.payload_bytes(self.dim)
    }

    pub(crate) fn descriptor_bytes(&self) -> usize {
        match self.bits {
            Bits::Raw => 0,
            _ => self.len * quant::DESCRIPTOR_BYTES,
        }
    }
}
