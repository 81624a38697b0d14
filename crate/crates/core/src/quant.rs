//! Flash quantization: per-vector min/max scaling to 4/8/16-bit fixed point,
//! `q = floor(L * (e - min(e)) / (max(e) - min(e)))` with `L = 2^bits - 1`,
//! and the memory-pressure policy that picks the width.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("non-finite component at index {0}")]
    NonFiniteInput(usize),
    #[error("cannot quantize an empty vector")]
    Empty,
    #[error("raw width has no integer codes")]
    RawWidth,
}

/// Storage width of one embedding component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bits {
    B4,
    B8,
    B16,
    /// Unquantized 32-bit floats.
    Raw,
}

/// Per-vector min/max pair stored next to each quantized vector.
pub const DESCRIPTOR_BYTES: usize = 8;

impl Bits {
    /// Largest code value `L`, or `None` for raw storage.
    pub fn levels(self) -> Option<u32> {
        match self {
            Bits::B4 => Some(15),
            Bits::B8 => Some(255),
            Bits::B16 => Some(65_535),
            Bits::Raw => None,
        }
    }

    pub fn width(self) -> u32 {
        match self {
            Bits::B4 => 4,
            Bits::B8 => 8,
            Bits::B16 => 16,
            Bits::Raw => 32,
        }
    }

    pub fn from_width(w: u32) -> Option<Bits> {
        match w {
            4 => Some(Bits::B4),
            8 => Some(Bits::B8),
            16 => Some(Bits::B16),
            32 => Some(Bits::Raw),
            _ => None,
        }
    }

    /// Payload bytes for one `dim`-component vector, excluding the descriptor.
    pub fn payload_bytes(self, dim: usize) -> usize {
        (dim * self.width() as usize).div_ceil(8)
    }

    /// Payload plus descriptor bytes for one vector.
    pub fn vector_bytes(self, dim: usize) -> usize {
        match self {
            Bits::Raw => self.payload_bytes(dim),
            _ => self.payload_bytes(dim) + DESCRIPTOR_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantDescriptor {
    pub bits: Bits,
    pub min: f32,
    pub max: f32,
}

pub fn quantize(e: &[f32], bits: Bits) -> Result<(Vec<u16>, QuantDescriptor), QuantError> {
    let levels = bits.levels().ok_or(QuantError::RawWidth)? as f64;
    if e.is_empty() {
        return Err(QuantError::Empty);
    }
    if let Some(i) = e.iter().position(|x| !x.is_finite()) {
        return Err(QuantError::NonFiniteInput(i));
    }
    let min = e.iter().copied().fold(f32::INFINITY, f32::min);
    let max = e.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let desc = QuantDescriptor { bits, min, max };
    let range = max as f64 - min as f64;
    if range == 0.0 {
        return Ok((vec![0; e.len()], desc));
    }
    let codes = e
        .iter()
        .map(|&x| {
            let t = levels * ((x as f64 - min as f64) / range);
            t.floor().clamp(0.0, levels) as u16
        })
        .collect();
    Ok((codes, desc))
}

/// Reconstruction `min + q * (max - min) / L`. The result is rounded up to
/// the next representable `f32`, which keeps `0 <= e - ê < (max - min) / L`
/// exact for floor-quantized codes.
#[inline]
pub fn dequantize_component(q: u16, desc: &QuantDescriptor) -> f32 {
    Affine::new(desc).decode(q)
}

#[derive(Clone, Copy)]
struct Affine {
    min: f64,
    step: f64,
}

impl Affine {
    #[inline]
    fn new(desc: &QuantDescriptor) -> Self {
        let levels = desc.bits.levels().unwrap_or(1) as f64;
        Self {
            min: desc.min as f64,
            step: (desc.max as f64 - desc.min as f64) / levels,
        }
    }

    #[inline]
    fn decode(self, q: u16) -> f32 {
        let exact = self.min + self.step * q as f64;
        let out = exact as f32;
        if (out as f64) < exact {
            out.next_up()
        } else {
            out
        }
    }
}

pub fn dequantize(q: &[u16], desc: &QuantDescriptor) -> Vec<f32> {
    if desc.max == desc.min {
        return vec![desc.min; q.len()];
    }
    q.iter().map(|&c| dequantize_component(c, desc)).collect()
}

/// Packs codes into the dense byte layout: two nibbles per byte (low first)
/// at 4 bits, one byte at 8, little-endian pairs at 16.
pub fn pack(codes: &[u16], bits: Bits, out: &mut Vec<u8>) {
    match bits {
        Bits::B4 => {
            for pair in codes.chunks(2) {
                let lo = pair[0] as u8 & 0x0f;
                let hi = pair.get(1).map_or(0, |&c| c as u8 & 0x0f);
                out.push(lo | (hi << 4));
            }
        }
        Bits::B8 => out.extend(codes.iter().map(|&c| c as u8)),
        Bits::B16 => {
            for &c in codes {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        Bits::Raw => unreachable!("raw vectors are not packed"),
    }
}

pub fn unpack(bytes: &[u8], bits: Bits, dim: usize, out: &mut Vec<u16>) {
    out.clear();
    match bits {
        Bits::B4 => {
            for i in 0..dim {
                let b = bytes[i / 2];
                out.push(if i % 2 == 0 { b & 0x0f } else { b >> 4 } as u16);
            }
        }
        Bits::B8 => out.extend(bytes[..dim].iter().map(|&b| b as u16)),
        Bits::B16 => out.extend(
            bytes[..dim * 2]
                .chunks_exact(2)
                .map(|p| u16::from_le_bytes([p[0], p[1]])),
        ),
        Bits::Raw => unreachable!("raw vectors are not packed"),
    }
}

/// Decodes a packed vector straight into floats.
pub fn decode_packed(bytes: &[u8], desc: &QuantDescriptor, dim: usize, out: &mut [f32]) {
    if desc.max == desc.min {
        out[..dim].fill(desc.min);
        return;
    }
    let a = Affine::new(desc);
    match desc.bits {
        Bits::B8 => {
            for (o, &b) in out[..dim].iter_mut().zip(bytes) {
                *o = a.decode(b as u16);
            }
        }
        Bits::B4 => {
            for (i, o) in out[..dim].iter_mut().enumerate() {
                let b = bytes[i / 2];
                *o = a.decode(if i % 2 == 0 { b & 0x0f } else { b >> 4 } as u16);
            }
        }
        Bits::B16 => {
            for (o, p) in out[..dim].iter_mut().zip(bytes.chunks_exact(2)) {
                *o = a.decode(u16::from_le_bytes([p[0], p[1]]));
            }
        }
        Bits::Raw => unreachable!("raw vectors are not packed"),
    }
}

/// Plain `f32` affine decode for distance scoring. Within a few ulps of
/// [`decode_packed`] but without its error bound.
#[inline]
pub(crate) fn decode_packed_fast(
    bytes: &[u8],
    desc: &QuantDescriptor,
    dim: usize,
    out: &mut [f32],
) {
    if desc.max == desc.min {
        out[..dim].fill(desc.min);
        return;
    }
    let levels = desc.bits.levels().unwrap_or(1) as f64;
    let scale = ((desc.max as f64 - desc.min as f64) / levels) as f32;
    let min = desc.min;
    match desc.bits {
        Bits::B8 => {
            for (o, &b) in out[..dim].iter_mut().zip(bytes) {
                *o = min + scale * b as f32;
            }
        }
        Bits::B4 => {
            for (i, o) in out[..dim].iter_mut().enumerate() {
                let b = bytes[i / 2];
                let c = if i % 2 == 0 { b & 0x0f } else { b >> 4 };
                *o = min + scale * c as f32;
            }
        }
        Bits::B16 => {
            for (o, p) in out[..dim].iter_mut().zip(bytes.chunks_exact(2)) {
                *o = min + scale * u16::from_le_bytes([p[0], p[1]]) as f32;
            }
        }
        Bits::Raw => unreachable!("raw vectors are not packed"),
    }
}

/// Memory-pressure policy. `load` is embedding-storage bytes over budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryPolicy {
    /// Load above which 8-bit storage kicks in; must be in (0, 1].
    pub threshold_fraction: f64,
    /// Load above which 4-bit storage kicks in.
    pub severe_fraction: f64,
    pub enabled: bool,
}

impl Default for MemoryPolicy {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.80,
            severe_fraction: 0.95,
            enabled: true,
        }
    }
}

pub fn select_bits(policy: &MemoryPolicy, load: f64) -> Bits {
    if !policy.enabled {
        Bits::Raw
    } else if load > policy.severe_fraction {
        Bits::B4
    } else if load > policy.threshold_fraction {
        Bits::B8
    } else {
        Bits::B16
    }
}

/// Applies [`select_bits`] with two-probe hysteresis: a width change is only
/// reported once the same target has been observed on two consecutive probes.
#[derive(Debug, Clone)]
pub struct AdaptiveQuantizer {
    policy: MemoryPolicy,
    current: Bits,
    pending: Option<Bits>,
}

impl AdaptiveQuantizer {
    pub fn new(policy: MemoryPolicy, current: Bits) -> Self {
        Self {
            policy,
            current,
            pending: None,
        }
    }

    pub fn current(&self) -> Bits {
        self.current
    }

    /// Feeds one load probe; returns the new width when a change commits.
    pub fn observe(&mut self, load: f64) -> Option<Bits> {
        let target = select_bits(&self.policy, load);
        if target == self.current {
            self.pending = None;
            return None;
        }
        if self.pending == Some(target) {
            self.pending = None;
            self.current = target;
            Some(target)
        } else {
            self.pending = Some(target);
            None
        }
    }
}
