//! K-means partitioning of one modality's embeddings and workload-driven
//! repartitioning.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Modality, NodeId};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_IMBALANCE_THRESHOLD: f64 = 2.0;
pub const REFIT_SAMPLE: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("cannot fit on an empty sample")]
    EmptySample,
    #[error("K={k} exceeds the sample size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("K must be at least 1 and at most 65536")]
    InvalidK,
    #[error("embedding has {found} components, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("plan targets model version {plan}, current is {current}")]
    StaleModelVersion { plan: u64, current: u64 },
    #[error("model json: {0}")]
    Json(String),
}

/// Fitted centroids for one modality. Immutable once built; a refit yields a
/// new model with a higher version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionModel {
    pub modality: Modality,
    pub version: u64,
    pub centroids: Vec<Vec<f32>>,
    pub assignment_counts: Vec<u64>,
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

fn nearest(e: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(e, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Result of a K-means run with its per-iteration distortion trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: PartitionModel,
    pub iterations: usize,
    pub distortion: Vec<f64>,
}

fn check_sample<V: AsRef<[f32]>>(sample: &[V], k: usize) -> Result<usize, PartitionError> {
    if sample.is_empty() {
        return Err(PartitionError::EmptySample);
    }
    if k == 0 || k > 1 << 16 {
        return Err(PartitionError::InvalidK);
    }
    if k > sample.len() {
        return Err(PartitionError::KTooLarge { k, n: sample.len() });
    }
    let d = sample[0].as_ref().len();
    for e in sample {
        if e.as_ref().len() != d {
            return Err(PartitionError::DimensionMismatch {
                expected: d,
                found: e.as_ref().len(),
            });
        }
    }
    Ok(d)
}

fn plus_plus<V: AsRef<[f32]>>(sample: &[V], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let to_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let first = rng.random_range(0..sample.len());
    let mut centroids = vec![to_f64(sample[first].as_ref())];
    let mut d2: Vec<f64> = sample
        .iter()
        .map(|e| sq_dist(e.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..sample.len())
        };
        let mu = to_f64(sample[pick].as_ref());
        for (i, e) in sample.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(e.as_ref(), &mu));
        }
        centroids.push(mu);
    }
    centroids
}

impl PartitionModel {
    /// Lloyd's K-means with k-means++ seeding.
    pub fn fit<V: AsRef<[f32]>>(
        modality: Modality,
        sample: &[V],
        k: usize,
        seed: u64,
    ) -> Result<Self, PartitionError> {
        Self::fit_report(modality, sample, k, seed).map(|r| r.model)
    }

    pub fn fit_report<V: AsRef<[f32]>>(
        modality: Modality,
        sample: &[V],
        k: usize,
        seed: u64,
    ) -> Result<FitReport, PartitionError> {
        let d = check_sample(sample, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids = plus_plus(sample, k, &mut rng);
        let mut labels = vec![0usize; sample.len()];
        let mut distortion = Vec::new();
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let mut total = 0.0;
            for (i, e) in sample.iter().enumerate() {
                let (c, dist) = nearest(e.as_ref(), &centroids);
                labels[i] = c;
                total += dist;
            }
            distortion.push(total);

            let mut sums = vec![vec![0.0f64; d]; k];
            let mut counts = vec![0usize; k];
            for (e, &c) in sample.iter().zip(&labels) {
                counts[c] += 1;
                for (s, &x) in sums[c].iter_mut().zip(e.as_ref()) {
                    *s += x as f64;
                }
            }
            let mut shift: f64 = 0.0;
            for c in 0..k {
                let next: Vec<f64> = if counts[c] > 0 {
                    sums[c].iter().map(|s| s / counts[c] as f64).collect()
                } else {
                    // Re-seed an empty cluster at the point worst served by
                    // its current centroid.
                    let far = (0..sample.len())
                        .max_by(|&a, &b| {
                            let da = sq_dist(sample[a].as_ref(), &centroids[labels[a]]);
                            let db = sq_dist(sample[b].as_ref(), &centroids[labels[b]]);
                            da.total_cmp(&db).then(b.cmp(&a))
                        })
                        .expect("non-empty sample");
                    sample[far].as_ref().iter().map(|&x| x as f64).collect()
                };
                let moved: f64 = next
                    .iter()
                    .zip(&centroids[c])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                shift = shift.max(moved);
                centroids[c] = next;
            }
            if shift < SHIFT_TOLERANCE {
                break;
            }
        }
        distortion.push(
            sample
                .iter()
                .map(|e| nearest(e.as_ref(), &centroids).1)
                .sum(),
        );
        let mut model = PartitionModel {
            modality,
            version: 1,
            centroids: centroids
                .iter()
                .map(|c| c.iter().map(|&x| x as f32).collect())
                .collect(),
            assignment_counts: vec![0; k],
        };
        for e in sample {
            let c = model.assign(e.as_ref()).expect("dimension checked");
            model.assignment_counts[c as usize] += 1;
        }
        Ok(FitReport {
            model,
            iterations,
            distortion,
        })
    }

    /// A one-centroid model placing everything in cluster 0.
    pub fn single(modality: Modality, dim: usize) -> Self {
        Self {
            modality,
            version: 1,
            centroids: vec![vec![0.0; dim]],
            assignment_counts: vec![0],
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the
    /// smallest index.
    pub fn assign(&self, e: &[f32]) -> Result<u16, PartitionError> {
        if e.len() != self.dim() {
            return Err(PartitionError::DimensionMismatch {
                expected: self.dim(),
                found: e.len(),
            });
        }
        if self.k() == 1 {
            return Ok(0);
        }
        let mut best = (0usize, f64::INFINITY);
        for (c, mu) in self.centroids.iter().enumerate() {
            let d: f64 = e
                .iter()
                .zip(mu)
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        Ok(best.0 as u16)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PartitionError> {
        let m: PartitionModel =
            serde_json::from_str(s).map_err(|e| PartitionError::Json(e.to_string()))?;
        let d = m.dim();
        if m.centroids.is_empty()
            || m.centroids.iter().any(|c| c.len() != d)
            || m.assignment_counts.len() != m.k()
        {
            return Err(PartitionError::Json("inconsistent centroid table".into()));
        }
        Ok(m)
    }
}

/// Rolling window of per-query partition hits and latencies.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadStats {
    window: usize,
    partitions: usize,
    events: VecDeque<(u16, f64)>,
}

impl WorkloadStats {
    pub fn new(partitions: usize, window: usize) -> Self {
        Self {
            window: window.max(1),
            partitions,
            events: VecDeque::new(),
        }
    }

    /// A full window holding exactly the given per-partition counts.
    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let mut s = Self::new(counts.len(), total as usize);
        for (p, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                s.record(p as u16, 0.0);
            }
        }
        s
    }

    pub fn record(&mut self, partition: u16, latency_ms: f64) {
        if self.events.len() == self.window {
            self.events.pop_front();
        }
        self.events.push_back((partition, latency_ms));
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn is_full(&self) -> bool {
        self.events.len() == self.window
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.partitions];
        for &(p, _) in &self.events {
            if (p as usize) < c.len() {
                c[p as usize] += 1;
            }
        }
        c
    }

    pub fn mean_latency(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.partitions];
        let mut n = vec![0u64; self.partitions];
        for &(p, l) in &self.events {
            if (p as usize) < sum.len() {
                sum[p as usize] += l;
                n[p as usize] += 1;
            }
        }
        sum.iter()
            .zip(&n)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect()
    }

    /// max count / mean count; 1.0 when there is nothing to compare.
    pub fn imbalance_ratio(&self) -> f64 {
        let counts = self.counts();
        let total: u64 = counts.iter().sum();
        if counts.len() < 2 || total == 0 {
            return 1.0;
        }
        let mean = total as f64 / counts.len() as f64;
        *counts.iter().max().unwrap() as f64 / mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub id: NodeId,
    pub from: u16,
    pub to: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepartitionPlan {
    pub from_version: u64,
    pub model: PartitionModel,
    pub moves: Vec<Move>,
}

impl RepartitionPlan {
    pub fn check_version(&self, current: &PartitionModel) -> Result<(), PartitionError> {
        if self.from_version != current.version {
            return Err(PartitionError::StaleModelVersion {
                plan: self.from_version,
                current: current.version,
            });
        }
        Ok(())
    }
}

/// Reservoir sample of `n` items (algorithm R).
fn reservoir<T: Copy>(items: impl Iterator<Item = T>, n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    for (i, item) in items.enumerate() {
        if out.len() < n {
            out.push(item);
        } else {
            let j = rng.random_range(0..=i);
            if j < n {
                out[j] = item;
            }
        }
    }
    out
}

/// Orders new centroids so each lands on the closest unclaimed old index,
/// keeping cluster ids stable where the geometry allows.
fn align(old: &PartitionModel, new: &mut PartitionModel) {
    let k = new.k();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, o) in old.centroids.iter().enumerate() {
        for (j, n) in new.centroids.iter().enumerate() {
            let d: f64 = o
                .iter()
                .zip(n)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum();
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut slot_for: Vec<Option<usize>> = vec![None; k];
    let mut taken = vec![false; k];
    for (_, i, j) in pairs {
        if i < k && slot_for[j].is_none() && !taken[i] {
            slot_for[j] = Some(i);
            taken[i] = true;
        }
    }
    let mut centroids = vec![Vec::new(); k];
    let mut counts = vec![0; k];
    let mut free = (0..k).filter(|&i| !taken[i]);
    for j in 0..k {
        let i = slot_for[j].unwrap_or_else(|| free.next().expect("free slot"));
        centroids[i] = std::mem::take(&mut new.centroids[j]);
        counts[i] = new.assignment_counts[j];
    }
    new.centroids = centroids;
    new.assignment_counts = counts;
}

/// Emits a plan when the query imbalance exceeds `threshold`: centroids are
/// refit on a reservoir sample of `population` and every embedding whose
/// assignment changes is listed.
pub fn check_rebalance(
    model: &PartitionModel,
    stats: &WorkloadStats,
    threshold: f64,
    population: &[(NodeId, &[f32])],
    seed: u64,
) -> Option<RepartitionPlan> {
    if model.k() < 2 || !stats.is_full() || stats.imbalance_ratio() <= threshold {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<&[f32]> = reservoir(
        population.iter().map(|&(_, e)| e),
        REFIT_SAMPLE.min(population.len()),
        &mut rng,
    );
    if sample.len() < model.k() {
        return None;
    }
    let mut next =
        PartitionModel::fit(model.modality.clone(), &sample, model.k(), rng.random()).ok()?;
    align(model, &mut next);
    next.version = model.version + 1;
    let mut counts = vec![0u64; next.k()];
    let mut moves = Vec::new();
    for &(id, e) in population {
        let from = model.assign(e).ok()?;
        let to = next.assign(e).ok()?;
        counts[to as usize] += 1;
        if from != to {
            moves.push(Move { id, from, to });
        }
    }
    next.assignment_counts = counts;
    Some(RepartitionPlan {
        from_version: model.version,
        model: next,
        moves,
    })
}
