//! Learned HNSW parameter prediction from workload features.

mod forest;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{Forest, ForestParams, Tree};

use crate::codec::{self, Dec, Enc, FileKind, SnapshotError};
use crate::hnsw::HnswIndex;

pub const FOREST_FORMAT_VERSION: u32 = 1;
pub const FALLBACK_M: usize = 32;
pub const FALLBACK_EF: usize = 200;
pub const M_RANGE: (usize, usize) = (4, 64);
pub const EF_RANGE: (usize, usize) = (16, 1024);
pub const MIN_BUCKETS: usize = 20;
pub const FEATURE_SAMPLE: usize = 10_000;
pub const FEATURE_COUNT: usize = 7;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("need at least {needed} labeled buckets, have {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad training log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkloadFeatures {
    pub mean: f64,
    pub std: f64,
    pub query_norm: f64,
    pub dim: usize,
    pub n: usize,
    pub query_rate: f64,
    pub k_typical: f64,
}

/// One logged query: pre-normalization norm and requested k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub norm: f64,
    pub k: usize,
}

impl WorkloadFeatures {
    /// Statistics over every component of `sample`; query fields from the
    /// window, zero when it is empty.
    pub fn extract<'a>(
        sample: impl IntoIterator<Item = &'a [f32]>,
        dim: usize,
        n: usize,
        window: &[QueryRecord],
    ) -> Self {
        let (mut count, mut sum, mut sum_sq) = (0u64, 0.0f64, 0.0f64);
        for v in sample {
            for &x in v {
                count += 1;
                sum += x as f64;
                sum_sq += (x as f64) * (x as f64);
            }
        }
        let (mean, std) = if count == 0 {
            (0.0, 0.0)
        } else {
            let m = sum / count as f64;
            (m, (sum_sq / count as f64 - m * m).max(0.0).sqrt())
        };
        let (query_norm, k_typical) = if window.is_empty() {
            (0.0, 0.0)
        } else {
            let norm = window.iter().map(|q| q.norm).sum::<f64>() / window.len() as f64;
            let mut ks: Vec<usize> = window.iter().map(|q| q.k).collect();
            ks.sort_unstable();
            let mid = ks.len() / 2;
            let median = if ks.len() % 2 == 1 {
                ks[mid] as f64
            } else {
                (ks[mid - 1] + ks[mid]) as f64 / 2.0
            };
            (norm, median)
        };
        Self {
            mean,
            std,
            query_norm,
            dim,
            n,
            query_rate: window.len() as f64,
            k_typical,
        }
    }

    /// Features of a partition, sampling at most 10 000 embeddings at an even
    /// stride over its ids.
    pub fn from_index(index: &HnswIndex, window: &[QueryRecord]) -> Self {
        let mut ids: Vec<u64> = index.ids().collect();
        ids.sort_unstable();
        let stride = ids.len().div_ceil(FEATURE_SAMPLE).max(1);
        let vectors: Vec<Vec<f32>> = ids
            .iter()
            .step_by(stride)
            .filter_map(|&id| index.vector(id))
            .collect();
        Self::extract(
            vectors.iter().map(|v| v.as_slice()),
            index.dim(),
            index.len(),
            window,
        )
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.mean,
            self.std,
            self.query_norm,
            self.dim as f64,
            self.n as f64,
            self.query_rate,
            self.k_typical,
        ]
    }

    /// Aggregation bucket: (log10 N in tenths, d, k_typical).
    pub fn bucket(&self) -> (i64, usize, i64) {
        let log_n = ((self.n as f64 + 1.0).log10() * 10.0).floor() as i64;
        (log_n, self.dim, self.k_typical.round() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: WorkloadFeatures,
    pub m: usize,
    pub ef: usize,
    pub recall: f64,
    pub latency_ms: f64,
}

impl Observation {
    fn validate(&self) -> Result<(), TunerError> {
        if !(0.0..=1.0).contains(&self.recall) {
            return Err(TunerError::InvalidObservation(format!(
                "recall {} outside [0, 1]",
                self.recall
            )));
        }
        if !(self.latency_ms.is_finite() && self.latency_ms > 0.0) {
            return Err(TunerError::InvalidObservation(format!(
                "latency {} not positive",
                self.latency_ms
            )));
        }
        if self.m == 0 || self.ef == 0 {
            return Err(TunerError::InvalidObservation("zero parameter".into()));
        }
        let f = &self.features;
        if !(f.mean.is_finite() && f.std.is_finite() && f.std >= 0.0 && f.query_norm.is_finite())
            || !(f.query_rate.is_finite() && f.k_typical.is_finite())
        {
            return Err(TunerError::InvalidObservation("non-finite features".into()));
        }
        Ok(())
    }
}

/// Append-only observation log, optionally mirrored to a JSONL file.
#[derive(Debug)]
pub struct TrainingLog {
    observations: Vec<Observation>,
    latency_target_ms: f64,
    file: Option<(File, PathBuf)>,
}

impl TrainingLog {
    pub fn new(latency_target_ms: f64) -> Self {
        Self {
            observations: Vec::new(),
            latency_target_ms,
            file: None,
        }
    }

    /// Opens (or creates) a JSONL log and loads the records it holds.
    pub fn open(path: &Path, latency_target_ms: f64) -> Result<Self, TunerError> {
        let mut observations = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let o: Observation = serde_json::from_str(&line).map_err(|e| TunerError::Log {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                observations.push(o);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            observations,
            latency_target_ms,
            file: Some((file, path.to_path_buf())),
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(_, p)| p.as_path())
    }

    pub fn record(&mut self, obs: Observation) -> Result<(), TunerError> {
        obs.validate()?;
        if let Some((f, _)) = &mut self.file {
            let mut line = serde_json::to_string(&obs).expect("plain struct");
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.observations.push(obs);
        Ok(())
    }

    /// Per bucket, the observation with the highest recall among those
    /// meeting the latency target (ties: lower latency, then earlier). When
    /// none meets the target the fastest one is used.
    pub fn labels(&self) -> Vec<Observation> {
        let mut buckets: BTreeMap<(i64, usize, i64), Vec<&Observation>> = BTreeMap::new();
        for o in &self.observations {
            buckets.entry(o.features.bucket()).or_default().push(o);
        }
        buckets
            .into_values()
            .map(|obs| {
                let within: Vec<&&Observation> = obs
                    .iter()
                    .filter(|o| o.latency_ms <= self.latency_target_ms)
                    .collect();
                let best = if within.is_empty() {
                    obs.iter()
                        .min_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms))
                } else {
                    within.into_iter().reduce(|best, o| {
                        let better = o.recall > best.recall
                            || (o.recall == best.recall && o.latency_ms < best.latency_ms);
                        if better {
                            o
                        } else {
                            best
                        }
                    })
                };
                **best.expect("non-empty bucket")
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPrediction {
    pub m: usize,
    pub ef: usize,
    /// Fraction of trees within 20% of the ensemble mean, the lower of the
    /// two targets. Zero for the fallback.
    pub confidence: f64,
    pub clamped: bool,
    pub fallback: bool,
}

impl ParamPrediction {
    pub fn fallback() -> Self {
        Self {
            m: FALLBACK_M,
            ef: FALLBACK_EF,
            confidence: 0.0,
            clamped: false,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerModel {
    pub m: Forest,
    pub ef: Forest,
}

fn agreement(preds: &[f64], mean: f64) -> f64 {
    let tol = 0.2 * mean.abs();
    preds.iter().filter(|p| (*p - mean).abs() <= tol).count() as f64 / preds.len() as f64
}

fn clamp(v: f64, (lo, hi): (usize, usize)) -> (usize, bool) {
    let r = v.round();
    if !r.is_finite() || r < lo as f64 {
        (lo, true)
    } else if r > hi as f64 {
        (hi, true)
    } else {
        (r as usize, false)
    }
}

impl TunerModel {
    pub fn train(log: &TrainingLog, params: &ForestParams) -> Result<Self, TunerError> {
        let labels = log.labels();
        if labels.len() < MIN_BUCKETS {
            return Err(TunerError::InsufficientData {
                needed: MIN_BUCKETS,
                found: labels.len(),
            });
        }
        let xs: Vec<Vec<f64>> = labels.iter().map(|o| o.features.to_vec()).collect();
        let ms: Vec<f64> = labels.iter().map(|o| o.m as f64).collect();
        let efs: Vec<f64> = labels.iter().map(|o| o.ef as f64).collect();
        let ef_params = ForestParams {
            seed: params.seed.wrapping_add(1),
            ..*params
        };
        Ok(Self {
            m: Forest::fit(&xs, &ms, params),
            ef: Forest::fit(&xs, &efs, &ef_params),
        })
    }

    pub fn predict(&self, features: &WorkloadFeatures) -> ParamPrediction {
        let x = features.to_vec();
        let pm = self.m.tree_predictions(&x);
        let pe = self.ef.tree_predictions(&x);
        let mm = pm.iter().sum::<f64>() / pm.len() as f64;
        let me = pe.iter().sum::<f64>() / pe.len() as f64;
        let (m, cm) = clamp(mm, M_RANGE);
        let (ef, ce) = clamp(me, EF_RANGE);
        ParamPrediction {
            m,
            ef,
            confidence: agreement(&pm, mm).min(agreement(&pe, me)),
            clamped: cm || ce,
            fallback: false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = Enc::new();
        h.u32(FEATURE_COUNT as u32);
        let mut m = Enc::new();
        self.m.encode(&mut m);
        let mut e = Enc::new();
        self.ef.encode(&mut e);
        codec::encode_container(
            FileKind::Forest,
            FOREST_FORMAT_VERSION,
            &[(1, h.finish()), (2, m.finish()), (3, e.finish())],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let sections = codec::decode_container(bytes, FileKind::Forest, FOREST_FORMAT_VERSION)?;
        let mut h = Dec::new(codec::section(&sections, 1)?);
        let features = h.u32()? as usize;
        h.expect_end()?;
        if features != FEATURE_COUNT {
            return Err(SnapshotError::Corrupt(format!(
                "{features} features, expected {FEATURE_COUNT}"
            )));
        }
        let decode = |tag| -> Result<Forest, SnapshotError> {
            let mut d = Dec::new(codec::section(&sections, tag)?);
            let f = Forest::decode(&mut d, features)?;
            d.expect_end()?;
            if f.trees.is_empty() {
                return Err(SnapshotError::Corrupt("empty forest".into()));
            }
            Ok(f)
        };
        Ok(Self {
            m: decode(2)?,
            ef: decode(3)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Serves predictions from the current model; swaps are atomic.
#[derive(Debug, Default)]
pub struct Tuner {
    model: RwLock<Option<Arc<TunerModel>>>,
}

impl Tuner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_model(model: TunerModel) -> Self {
        Self {
            model: RwLock::new(Some(Arc::new(model))),
        }
    }

    pub fn install(&self, model: TunerModel) {
        *self.model.write() = Some(Arc::new(model));
    }

    pub fn clear(&self) {
        *self.model.write() = None;
    }

    pub fn model(&self) -> Option<Arc<TunerModel>> {
        self.model.read().clone()
    }

    pub fn predict(&self, features: &WorkloadFeatures) -> ParamPrediction {
        match self.model() {
            Some(m) => m.predict(features),
            None => ParamPrediction::fallback(),
        }
    }
}
