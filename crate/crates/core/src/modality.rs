use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Source data type of an embedding. Each modality has its own registered
/// dimensionality and its own set of vector partitions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Text,
    Image,
    Audio,
    Video,
    Other(String),
}

impl Modality {
    pub fn as_str(&self) -> &str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Other(name) => name,
        }
    }

    /// Default encoder widths: MiniLM text (384), CLIP ViT-B/16 (512),
    /// Whisper (1280), VideoMAE (768).
    pub fn default_dimension(&self) -> Option<usize> {
        match self {
            Modality::Text => Some(384),
            Modality::Image => Some(512),
            Modality::Audio => Some(1280),
            Modality::Video => Some(768),
            Modality::Other(_) => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "text" => Modality::Text,
            "image" => Modality::Image,
            "audio" => Modality::Audio,
            "video" => Modality::Video,
            _ => Modality::Other(s.to_string()),
        })
    }
}

impl From<&str> for Modality {
    fn from(s: &str) -> Self {
        s.parse().unwrap_or_else(|never| match never {})
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Modality::from(s.as_str()))
    }
}

/// Modality → dimensionality table. Iteration follows registration order,
/// which also fixes each modality's ordinal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityRegistry {
    entries: Vec<(Modality, usize)>,
}

impl ModalityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers (or re-registers with the same width) a modality.
    /// Returns false if the modality already exists with a different width.
    pub fn register(&mut self, modality: Modality, dim: usize) -> bool {
        match self.dimension(&modality) {
            Some(d) => d == dim,
            None => {
                self.entries.push((modality, dim));
                true
            }
        }
    }

    pub fn dimension(&self, modality: &Modality) -> Option<usize> {
        self.entries
            .iter()
            .find(|(m, _)| m == modality)
            .map(|&(_, d)| d)
    }

    pub fn ordinal(&self, modality: &Modality) -> Option<u16> {
        self.entries
            .iter()
            .position(|(m, _)| m == modality)
            .map(|i| i as u16)
    }

    pub fn by_ordinal(&self, ordinal: u16) -> Option<&Modality> {
        self.entries.get(ordinal as usize).map(|(m, _)| m)
    }

    pub fn contains(&self, modality: &Modality) -> bool {
        self.dimension(modality).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Modality, usize)> {
        self.entries.iter().map(|(m, d)| (m, *d))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_dimension(&self) -> Option<usize> {
        self.entries.iter().map(|&(_, d)| d).max()
    }
}
