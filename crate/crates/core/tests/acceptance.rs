//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hmgi_core::bench::{
    decoy_workload, generate_synthetic_kg, run_benchmark, run_on_engine, run_update_benchmark,
    BenchConfig, ChurnMix, Dataset, ModalitySpec, SynthConfig, UpdateConfig, Workload,
};
use hmgi_core::delta::{DeltaConfig, VersionedIndex};
use hmgi_core::engine::{Engine, EngineConfig, MemoryReport, QuantMode};
use hmgi_core::graph::PropValue;
use hmgi_core::hnsw::HnswParams;
use hmgi_core::partition::PartitionModel;
use hmgi_core::quant::{decode_packed, pack, quantize, Bits};
use hmgi_core::query::cost::{estimate_cost, CostCoefficients};
use hmgi_core::query::fusion::fuse_score;
use hmgi_core::query::{parse, ParseError};
use hmgi_core::tuner::{
    ForestParams, Observation, TrainingLog, TunerModel, WorkloadFeatures, EF_RANGE,
};
use hmgi_core::{Modality, NodeId};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_vecs(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect()
}

fn cos_dist(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

fn gt_cache() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-gt")
}

// ---------------------------------------------------------------- ANN suite

const SUITE_N: usize = 50_000;
const SUITE_D: usize = 128;
const SUITE_Q: usize = 1_000;

struct SuiteRun {
    recall: f64,
    elapsed: Duration,
    build: Duration,
    memory: MemoryReport,
}

fn suite_data() -> (Dataset, Workload) {
    let ds = Dataset::from_vectors(Modality::Text, random_vecs(SUITE_N, SUITE_D, 0xa11));
    let mut w = Workload::vector_queries(Modality::Text, random_vecs(SUITE_Q, SUITE_D, 0xa12), 10);
    w.trials = 1;
    (ds, w)
}

fn run_suite(ds: &Dataset, w: &Workload, quant: QuantMode) -> Result<SuiteRun, String> {
    let t = Instant::now();
    let engine_cfg = EngineConfig {
        quant,
        hnsw: HnswParams::new(32, 200, 200),
        ..EngineConfig::default()
    };
    let engine = ds.load_into(engine_cfg).map_err(|e| e.to_string())?;
    let build = t.elapsed();
    let mut cfg = BenchConfig::new("hmgi", "random-50k", engine_cfg);
    cfg.ef = Some(200);
    cfg.cache_dir = Some(gt_cache());
    let out = run_on_engine(&engine, ds, w, &cfg, build).map_err(|e| e.to_string())?;
    Ok(SuiteRun {
        recall: out.report.recall_at_k,
        elapsed: t.elapsed(),
        build,
        memory: engine.memory_report(),
    })
}

fn ann_fidelity(raw: &SuiteRun) -> Outcome {
    ensure!(
        raw.recall >= 0.95,
        "recall@10 {:.4} < 0.95 at M=32 ef=200",
        raw.recall
    );
    ensure!(
        raw.elapsed < Duration::from_secs(300),
        "took {:.1}s",
        raw.elapsed.as_secs_f64()
    );
    Ok(format!(
        "recall@10 {:.4} on {SUITE_N}x{SUITE_D}, {SUITE_Q} queries, build {:.1}s, total {:.1}s",
        raw.recall,
        raw.build.as_secs_f64(),
        raw.elapsed.as_secs_f64()
    ))
}

// ------------------------------------------------------------ exact regime

fn brute_topk(live: &BTreeMap<NodeId, Vec<f32>>, q: &[f32], k: usize) -> Vec<(NodeId, f64)> {
    let mut all: Vec<(NodeId, f64)> = live.iter().map(|(&id, v)| (id, cos_dist(q, v))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Distances are compared at f32 precision; a differing id is accepted only
/// when it ties with the expected one.
const TIE: f64 = 1e-6;

fn exact_regime() -> Outcome {
    const D: usize = 8;
    let mut queries = 0usize;
    let mut ops = 0usize;
    for seq in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xe7ac7 + seq);
        let n0 = rng.random_range(0..1200usize);
        let mut live: BTreeMap<NodeId, Vec<f32>> = BTreeMap::new();
        let mut items = Vec::with_capacity(n0);
        for id in 0..n0 as NodeId {
            let v: Vec<f32> = if id > 0 && rng.random_bool(0.05) {
                live[&rng.random_range(0..id)].clone()
            } else {
                (0..D).map(|_| rng.random_range(-1.0f32..1.0)).collect()
            };
            live.insert(id, v.clone());
            items.push((id, v));
        }
        let model = if n0 >= 2 {
            let sample: Vec<&[f32]> = items.iter().map(|(_, v)| v.as_slice()).collect();
            PartitionModel::fit(Modality::Text, &sample, 2, seq).map_err(|e| e.to_string())?
        } else {
            PartitionModel::single(Modality::Text, D)
        };
        let config = DeltaConfig {
            auto_vacuum: false,
            ..DeltaConfig::default()
        };
        let idx = VersionedIndex::new(
            D,
            model,
            HnswParams::new(16, 64, 64).with_seed(seq),
            Bits::Raw,
            0,
            config,
        )
        .map_err(|e| e.to_string())?;
        idx.bulk_load(&items).map_err(|e| e.to_string())?;
        let mut next = n0 as NodeId;
        for _ in 0..80 {
            let roll = rng.random_range(0..100);
            let pick = |rng: &mut ChaCha8Rng, live: &BTreeMap<NodeId, Vec<f32>>| {
                let i = rng.random_range(0..live.len());
                *live.keys().nth(i).unwrap()
            };
            ops += 1;
            if roll < 25 && (next as usize) < 2000 {
                let v: Vec<f32> = (0..D).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                idx.insert(next, &v).map_err(|e| e.to_string())?;
                live.insert(next, v);
                next += 1;
            } else if roll < 45 && !live.is_empty() {
                let id = pick(&mut rng, &live);
                let v: Vec<f32> = (0..D).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                idx.update(id, &v).map_err(|e| e.to_string())?;
                live.insert(id, v);
            } else if roll < 60 && !live.is_empty() {
                let id = pick(&mut rng, &live);
                idx.delete(id).map_err(|e| e.to_string())?;
                live.remove(&id);
            } else if roll < 65 {
                idx.vacuum(usize::MAX).map_err(|e| e.to_string())?;
            } else {
                queries += 1;
                let q: Vec<f32> = if !live.is_empty() && rng.random_bool(0.3) {
                    live[&pick(&mut rng, &live)].clone()
                } else {
                    (0..D).map(|_| rng.random_range(-1.0f32..1.0)).collect()
                };
                let k = rng.random_range(1..=20usize);
                let ef = (next as usize).max(k);
                let got = idx
                    .snapshot()
                    .hybrid_topk(&q, k, Some(ef))
                    .map_err(|e| e.to_string())?;
                let want = brute_topk(&live, &q, k);
                ensure!(
                    got.len() == want.len(),
                    "seq {seq}: {} results, expected {}",
                    got.len(),
                    want.len()
                );
                let mut seen = BTreeSet::new();
                for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                    ensure!(seen.insert(g.id), "seq {seq}: duplicate id {}", g.id);
                    let Some(v) = live.get(&g.id) else {
                        return Err(format!("seq {seq}: returned dead id {}", g.id));
                    };
                    let gd = cos_dist(&q, v);
                    ensure!(
                        g.id == w.0 || (gd - w.1).abs() <= TIE,
                        "seq {seq} rank {i}: id {} at {gd}, expected {} at {}",
                        g.id,
                        w.0,
                        w.1
                    );
                }
            }
        }
    }
    Ok(format!(
        "200 sequences, {ops} operations, {queries} queries matched brute force"
    ))
}

// ------------------------------------------------------------ fusion oracle

/// Scored from the definition with compensated summation, in a different
/// evaluation order from the library.
fn fusion_oracle(d_v: f64, hops: &[f64], w_v: f64, w_g: f64) -> f64 {
    let mut graph = 0.0;
    if !hops.is_empty() {
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for &h in hops {
            let t = sum + h;
            c += if sum.abs() >= h.abs() {
                (sum - t) + h
            } else {
                (h - t) + sum
            };
            sum = t;
        }
        graph = (sum + c) / hops.len() as f64;
    }
    w_g * graph + (w_v - w_v * d_v)
}

fn fusion_oracle_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf05e);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let d_v = rng.random_range(0.0..=1.0);
        let n = rng.random_range(0..=20usize);
        let hops: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let w_v: f64 = rng.random_range(0.0..=1.0);
        let w_g = 1.0 - w_v;
        let got = fuse_score(d_v, &hops, w_v, w_g);
        let want = fusion_oracle(d_v, &hops, w_v, w_g);
        let rel = if want == 0.0 {
            got.abs()
        } else {
            ((got - want) / want).abs()
        };
        worst = worst.max(rel);
        ensure!(
            rel <= 1e-12,
            "d_v={d_v} hops={hops:?} w=({w_v},{w_g}): {got} vs {want}"
        );
    }
    Ok(format!(
        "10000 tuples, worst relative error {worst:.2e} (limit 1e-12)"
    ))
}

// -------------------------------------------------------------- cost oracle

fn cost_oracle(n: u64, d: usize, h: usize, p: u64, c: &CostCoefficients) -> f64 {
    let n = n as f64;
    let p = p as f64;
    c.alpha * n.ln() + c.beta * (d as f64 * h as f64) + c.gamma * p * (n / p).ln()
}

fn cost_oracle_check() -> Outcome {
    let c = CostCoefficients::default();
    let ns: Vec<u64> = (0..10).map(|i| 64u64 << i).collect();
    let ds: [usize; 10] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 768];
    let hs: Vec<usize> = (0..10).collect();
    let ps = [1u64, 2, 4, 8];
    let mut grid = BTreeMap::new();
    let mut points = 0;
    for (i, &n) in ns.iter().enumerate() {
        for &d in &ds {
            for &h in &hs {
                let p = ps[(i + h) % ps.len()];
                let est = estimate_cost(n, d, h, p, c).map_err(|e| e.to_string())?;
                let want = cost_oracle(n, d, h, p, &c);
                ensure!(
                    est.cost == want,
                    "C({n},{d},{h},{p}) = {} vs oracle {want}",
                    est.cost
                );
                grid.insert((n, d, h, p), est.cost);
                points += 1;
            }
        }
    }
    ensure!(points == 1000, "grid holds {points} points");
    // Monotone in N at fixed (d, h, p), and in d*h at fixed (N, p).
    let mut pairs = 0;
    for &d in &ds {
        for &h in &hs {
            for &p in &ps {
                let mut prev: Option<f64> = None;
                for &n in &ns {
                    let cost = estimate_cost(n, d, h, p, c).unwrap().cost;
                    if let Some(prev) = prev {
                        ensure!(cost > prev, "not increasing in N at d={d} h={h} p={p}");
                        pairs += 1;
                    }
                    prev = Some(cost);
                }
            }
        }
    }
    for &n in &ns {
        for &p in &ps {
            let mut by_work: Vec<(usize, f64)> = ds
                .iter()
                .flat_map(|&d| hs.iter().map(move |&h| (d, h)))
                .map(|(d, h)| (d * h, estimate_cost(n, d, h, p, c).unwrap().cost))
                .collect();
            by_work.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for w in by_work.windows(2) {
                if w[1].0 > w[0].0 {
                    ensure!(w[1].1 > w[0].1, "not increasing in d*h at N={n} p={p}");
                    pairs += 1;
                } else {
                    ensure!(w[1].1 == w[0].1, "equal d*h, unequal cost at N={n}");
                }
            }
        }
    }
    Ok(format!(
        "1000 grid points exact, {pairs} ordered pairs strictly increasing"
    ))
}

// ------------------------------------------------------------- quantization

fn quantization(raw: &SuiteRun, b8: &SuiteRun) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a47);
    const D: usize = 64;
    let mut violations = 0usize;
    let mut components = 0usize;
    let mut packed = Vec::new();
    let mut decoded = vec![0f32; D];
    for i in 0..100_000 {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let offset = rng.random_range(-5.0..5.0) * scale;
        let v: Vec<f32> = (0..D)
            .map(|_| {
                let x: f64 = if i % 2 == 0 {
                    StandardNormal.sample(&mut rng)
                } else {
                    rng.random_range(-1.0..1.0)
                };
                (offset + scale * x) as f32
            })
            .collect();
        let (codes, desc) = quantize(&v, Bits::B8).map_err(|e| e.to_string())?;
        packed.clear();
        pack(&codes, Bits::B8, &mut packed);
        decode_packed(&packed, &desc, D, &mut decoded);
        let bound = (desc.max as f64 - desc.min as f64) / 255.0;
        for (&e, &r) in v.iter().zip(&decoded) {
            components += 1;
            if (e as f64 - r as f64).abs() > bound {
                violations += 1;
            }
        }
    }
    ensure!(
        violations == 0,
        "{violations} of {components} components exceed (max-min)/255"
    );
    let fp32 = raw.memory.embedding_payload_bytes;
    let q = b8.memory.embedding_payload_bytes + b8.memory.descriptor_bytes;
    let limit = fp32 / 2 + b8.memory.descriptor_bytes;
    ensure!(
        q <= limit,
        "B8 bytes {q} exceed half of fp32 {fp32} plus descriptors"
    );
    let drop = raw.recall - b8.recall;
    ensure!(
        drop <= 0.02,
        "recall fell {drop:.4} ({:.4} -> {:.4})",
        raw.recall,
        b8.recall
    );
    Ok(format!(
        "0/{components} violations; B8 {q} B vs fp32 {fp32} B ({:.1}%); recall {:.4} -> {:.4}",
        100.0 * q as f64 / fp32 as f64,
        raw.recall,
        b8.recall
    ))
}

// ---------------------------------------------------------------- delta/MVCC

fn churn_recall() -> Result<String, String> {
    let ds = Dataset::from_vectors(Modality::Text, random_vecs(10_000, 32, 0xc1));
    let mut w = Workload::vector_queries(Modality::Text, random_vecs(200, 32, 0xc2), 10);
    w.trials = 1;
    let mut bench = BenchConfig::new("hmgi", "churn", EngineConfig::default());
    bench.ef = Some(40);
    let r = run_update_benchmark(
        &ds,
        &w,
        &UpdateConfig {
            bench,
            churn: 0.1,
            mix: ChurnMix::default(),
            seed: 0xc3,
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        r.recall_ratio >= 0.95,
        "hybrid {:.4} / rebuilt {:.4} = {:.4}",
        r.recall_hybrid,
        r.recall_rebuilt,
        r.recall_ratio
    );
    ensure!(
        r.deleted_violations == 0,
        "{} deleted ids returned",
        r.deleted_violations
    );
    Ok(format!(
        "10% churn ratio {:.4} (hybrid {:.4}, rebuilt {:.4})",
        r.recall_ratio, r.recall_hybrid, r.recall_rebuilt
    ))
}

fn snapshot_isolation() -> Result<String, String> {
    const D: usize = 16;
    let base = random_vecs(5000, D, 0x51);
    let sample: Vec<&[f32]> = base.iter().map(|v| v.as_slice()).collect();
    let model = PartitionModel::fit(Modality::Text, &sample, 2, 1).map_err(|e| e.to_string())?;
    let config = DeltaConfig {
        auto_vacuum: false,
        ..DeltaConfig::default()
    };
    let idx = VersionedIndex::new(D, model, HnswParams::new(16, 64, 64), Bits::Raw, 0, config)
        .map_err(|e| e.to_string())?;
    let items: Vec<(NodeId, Vec<f32>)> = base
        .iter()
        .enumerate()
        .map(|(i, v)| (i as NodeId, v.clone()))
        .collect();
    idx.bulk_load(&items).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x52);
    for (i, v) in random_vecs(500, D, 0x53).into_iter().enumerate() {
        idx.insert(5000 + i as NodeId, &v)
            .map_err(|e| e.to_string())?;
    }
    for _ in 0..300 {
        let id = rng.random_range(0..5000u64);
        let v: Vec<f32> = (0..D).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        idx.update(id, &v).map_err(|e| e.to_string())?;
    }
    let mut deleted = BTreeSet::new();
    while deleted.len() < 200 {
        let id = rng.random_range(0..5500u64);
        if deleted.insert(id) {
            idx.delete(id).map_err(|e| e.to_string())?;
        }
    }
    let queries = random_vecs(50, D, 0x54);
    let ef = Some(6000);
    let snap = idx.snapshot();
    let before: Vec<Vec<NodeId>> = queries
        .iter()
        .map(|q| {
            snap.hybrid_topk(q, 10, ef)
                .unwrap()
                .iter()
                .map(|h| h.id)
                .collect()
        })
        .collect();
    let pending = snap.delta_records();
    let mut concurrent_checks = 0usize;
    let mismatch = std::thread::scope(|s| {
        let vac = s.spawn(|| idx.vacuum(usize::MAX).map(|_| ()));
        let mut bad = None;
        while !vac.is_finished() || concurrent_checks == 0 {
            for (q, want) in queries.iter().zip(&before) {
                let got: Vec<NodeId> = snap
                    .hybrid_topk(q, 10, ef)
                    .unwrap()
                    .iter()
                    .map(|h| h.id)
                    .collect();
                concurrent_checks += 1;
                if &got != want && bad.is_none() {
                    bad = Some(format!("old snapshot changed: {got:?} vs {want:?}"));
                }
            }
        }
        vac.join().unwrap().map_err(|e| e.to_string())?;
        Ok::<_, String>(bad)
    })?;
    if let Some(m) = mismatch {
        return Err(m);
    }
    ensure!(
        idx.delta_len() == 0,
        "vacuum left {} records",
        idx.delta_len()
    );
    let fresh = idx.snapshot();
    for (q, want) in queries.iter().zip(&before) {
        let old: Vec<NodeId> = snap
            .hybrid_topk(q, 10, ef)
            .unwrap()
            .iter()
            .map(|h| h.id)
            .collect();
        let new: Vec<NodeId> = fresh
            .hybrid_topk(q, 10, ef)
            .unwrap()
            .iter()
            .map(|h| h.id)
            .collect();
        ensure!(&old == want, "old snapshot changed after vacuum");
        ensure!(&new == want, "merged view differs: {new:?} vs {want:?}");
    }
    Ok(format!(
        "{pending} staged records merged under {concurrent_checks} concurrent reads, lists unchanged"
    ))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn staging_latency() -> Result<String, String> {
    const D: usize = 8;
    const STAGED: usize = 2000;
    let sizes = [1_000usize, 10_000, 100_000, 1_000_000];
    let mut medians = Vec::new();
    let extra = random_vecs(STAGED, D, 0x5a);
    for &n in &sizes {
        let base = random_vecs(n, D, 0x5b);
        let sample: Vec<&[f32]> = base.iter().take(10_000).map(|v| v.as_slice()).collect();
        let model =
            PartitionModel::fit(Modality::Text, &sample, 2, 3).map_err(|e| e.to_string())?;
        let config = DeltaConfig {
            auto_vacuum: false,
            ..DeltaConfig::default()
        };
        let idx = VersionedIndex::new(D, model, HnswParams::new(4, 16, 16), Bits::Raw, 0, config)
            .map_err(|e| e.to_string())?;
        let items: Vec<(NodeId, Vec<f32>)> = base
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as NodeId, v))
            .collect();
        idx.bulk_load(&items).map_err(|e| e.to_string())?;
        drop(items);
        let mut lat = Vec::with_capacity(STAGED);
        for (i, v) in extra.iter().enumerate() {
            let t = Instant::now();
            idx.insert((n + i) as NodeId, v)
                .map_err(|e| e.to_string())?;
            lat.push(t.elapsed().as_secs_f64() * 1e6);
        }
        medians.push(median(lat));
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).log10()).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.log10()).collect();
    let s = slope(&xs, &ys);
    let shown: Vec<String> = medians.iter().map(|m| format!("{m:.2}")).collect();
    ensure!(
        s < 0.1,
        "median staging latency grows with size: log-log slope {s:.3}, medians {shown:?} us"
    );
    Ok(format!(
        "median staging us at 1e3..1e6 = {shown:?}, log-log slope {s:.3}"
    ))
}

fn delta_mvcc() -> Outcome {
    let a = churn_recall()?;
    let b = snapshot_isolation()?;
    let c = staging_latency()?;
    Ok(format!("{a}; {b}; {c}"))
}

// ------------------------------------------------------------- partitioning

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

fn two_modality_dataset() -> Dataset {
    generate_synthetic_kg(&SynthConfig {
        nodes: 4000,
        edges: 12_000,
        modalities: vec![
            ModalitySpec {
                modality: Modality::Text,
                dim: 24,
                clusters: 3,
                share: 0.3,
            },
            ModalitySpec {
                modality: Modality::Image,
                dim: 24,
                clusters: 3,
                share: 0.7,
            },
        ],
        spread: 0.5,
        seed: 0x7a,
    })
    .expect("valid synthetic config")
}

fn partitioning() -> Outcome {
    let planted = generate_synthetic_kg(&SynthConfig {
        nodes: 5000,
        edges: 0,
        seed: 0x71,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let vs: Vec<&[f32]> = planted
        .nodes
        .iter()
        .map(|n| n.embedding.as_deref().unwrap())
        .collect();
    let model = PartitionModel::fit(Modality::Text, &vs, 2, 0x72).map_err(|e| e.to_string())?;
    let mut agree = 0usize;
    let mut planted_agree = 0usize;
    for (node, v) in planted.nodes.iter().zip(&vs) {
        let mut best = (0usize, f64::INFINITY);
        for (c, mu) in model.centroids.iter().enumerate() {
            let d = sq_dist(v, mu);
            if d < best.1 {
                best = (c, d);
            }
        }
        let got = model.assign(v).map_err(|e| e.to_string())? as usize;
        agree += usize::from(got == best.0);
        planted_agree += usize::from(got == node.cluster.unwrap());
    }
    let planted_agree = planted_agree.max(vs.len() - planted_agree);
    ensure!(
        agree == vs.len(),
        "assignment matched argmin on {agree}/{}",
        vs.len()
    );

    let ds = two_modality_dataset();
    let n_text = ds.vectors_of(&Modality::Text).len();
    let n_total = ds.len();
    let part = ds
        .load_into(EngineConfig::default())
        .map_err(|e| e.to_string())?;
    let mono = ds
        .load_into(EngineConfig {
            partitioning: false,
            ..EngineConfig::default()
        })
        .map_err(|e| e.to_string())?;
    let text_ordinal = part.index(&Modality::Text).unwrap().modality_ordinal();
    let text_ids = part.embedded_ids(&Modality::Text);
    let queries = random_vecs(50, 24, 0x73);
    let (mut scope_part, mut scope_mono) = (0usize, 0usize);
    let (mut evals_part, mut evals_mono) = (0usize, 0usize);
    let mut touched = BTreeSet::new();
    for q in &queries {
        let params = BTreeMap::from([("q".to_string(), q.clone())]);
        let text = "VECTOR_SEARCH(text, $q, k=10, ef=64) RETURN TOP 10";
        let a = part.query(text, &params).map_err(|e| e.to_string())?;
        let b = mono.query(text, &params).map_err(|e| e.to_string())?;
        for p in &a.stats.partitions {
            ensure!(
                p.modality_ordinal() == text_ordinal,
                "text query touched partition {p:?}"
            );
            touched.insert(*p);
        }
        for r in a.results.iter().chain(&b.results) {
            ensure!(text_ids.contains(&r.id), "non-text node {} returned", r.id);
        }
        for r in &a.results {
            let p = r
                .partition
                .ok_or_else(|| format!("anchor {} lacks provenance", r.id))?;
            ensure!(
                p.modality_ordinal() == text_ordinal,
                "candidate {} from partition {p:?}",
                r.id
            );
        }
        scope_part += a.stats.vectors_in_scope;
        scope_mono += b.stats.vectors_in_scope;
        evals_part += a.stats.vector.distance_evals;
        evals_mono += b.stats.vector.distance_evals;
    }
    ensure!(
        scope_part == n_text * queries.len() && scope_mono == n_total * queries.len(),
        "in-scope vectors {scope_part}/{scope_mono}, expected {n_text}/{n_total} per query"
    );
    let ratio = scope_part as f64 / scope_mono as f64;
    let share = n_text as f64 / n_total as f64;
    ensure!(
        (ratio - share).abs() < 1e-12,
        "candidate ratio {ratio} vs share {share}"
    );
    Ok(format!(
        "argmin agreement {agree}/{0} (planted {planted_agree}/{0}); text queries touched {1} text partitions only; \
         in-scope ratio {ratio:.4} = text share {share:.4}; distance evals {evals_part} vs {evals_mono}",
        vs.len(),
        touched.len()
    ))
}

// -------------------------------------------------------------- fusion ablation

fn fusion_ablation() -> Outcome {
    let (ds, mut w) = decoy_workload(100, 32, 10, 20, 0xde);
    w.trials = 1;
    let on = run_benchmark(
        &ds,
        &w,
        &BenchConfig::new("fusion-on", "decoy", EngineConfig::default()),
    )
    .map_err(|e| e.to_string())?;
    let off_cfg = EngineConfig {
        fusion: false,
        ..EngineConfig::default()
    };
    let off = run_benchmark(&ds, &w, &BenchConfig::new("fusion-off", "decoy", off_cfg))
        .map_err(|e| e.to_string())?;
    let gap = on.report.recall_at_k - off.report.recall_at_k;
    ensure!(
        gap >= 0.10,
        "fusion on {:.4}, off {:.4}, gap {gap:.4}",
        on.report.recall_at_k,
        off.report.recall_at_k
    );
    Ok(format!(
        "recall on {:.4}, off {:.4}, gap {gap:.4}",
        on.report.recall_at_k, off.report.recall_at_k
    ))
}

// --------------------------------------------------------------------- parser

fn parser() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 1000,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let cases = std::cell::Cell::new(0usize);
    let result = runner.run(&common::ast(), |a| {
        cases.set(cases.get() + 1);
        let text = a.to_string();
        let parsed = parse(&text)
            .map_err(|e| proptest::test_runner::TestCaseError::fail(format!("{e} in {text}")))?;
        let again = parse(&parsed.to_string())
            .map_err(|e| proptest::test_runner::TestCaseError::fail(format!("{e} on reprint")))?;
        proptest::prop_assert_eq!(&parsed, &again);
        proptest::prop_assert_eq!(&parsed, &a);
        Ok(())
    });
    if let Err(e) = result {
        return Err(format!("round trip failed: {e}"));
    }
    for src in common::MALFORMED {
        let outcome = catch_unwind(|| parse(src));
        match outcome {
            Ok(Err(ParseError::Syntax { line, col, .. })) => {
                ensure!(line >= 1 && col >= 1, "{src:?}: position {line}:{col}");
            }
            Ok(other) => return Err(format!("{src:?} gave {other:?}")),
            Err(_) => return Err(format!("{src:?} panicked")),
        }
    }
    Ok(format!(
        "{} generated queries round-tripped; {} malformed inputs gave positioned syntax errors",
        cases.get(),
        common::MALFORMED.len()
    ))
}

// ---------------------------------------------------------------- persistence

fn persistence_engine() -> Result<Engine, String> {
    let ds = two_modality_dataset();
    let cfg = EngineConfig {
        delta_config: DeltaConfig {
            auto_vacuum: false,
            ..DeltaConfig::default()
        },
        ..EngineConfig::default()
    };
    let e = ds.load_into(cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e);
    for (i, v) in random_vecs(60, 24, 0x9f).into_iter().enumerate() {
        let m = if i % 2 == 0 {
            Modality::Text
        } else {
            Modality::Image
        };
        let id = e
            .add_node(["Fresh".to_string()], m, Some(&v), BTreeMap::new())
            .map_err(|e| e.to_string())?;
        e.add_edge(id, rng.random_range(0..4000), "related", 0.5)
            .map_err(|e| e.to_string())?;
    }
    for id in 0..40u64 {
        let v: Vec<f32> = (0..24).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        e.update_embedding(id * 7, &v).map_err(|e| e.to_string())?;
    }
    for id in 0..25u64 {
        e.delete_node(id * 13 + 1).map_err(|e| e.to_string())?;
    }
    e.set_property(2, "rank", PropValue::Int(9))
        .map_err(|e| e.to_string())?;
    e.tuner().install(train_tuner().map_err(|e| e.to_string())?);
    Ok(e)
}

fn fixed_queries() -> Vec<(String, BTreeMap<String, Vec<f32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x90);
    let templates = [
        "VECTOR_SEARCH({m}, $q, k=10) RETURN TOP 10",
        "VECTOR_SEARCH({m}, $q, k=5, ef=40) TRAVERSE hops=1 SIMILARITY_WEIGHT v=0.6 g=0.4 RETURN TOP 15",
        "VECTOR_SEARCH({m}, $q, k=5) TRAVERSE hops=2 dir=both RETURN TOP 20",
        "MATCH (v:C1) VECTOR_SEARCH({m}, $q, k=8) RETURN TOP 8",
        "MATCH (v) WHERE v.cluster = 2 VECTOR_SEARCH({m}, $q, k=6) TRAVERSE hops=1 RETURN TOP 12",
    ];
    (0..100)
        .map(|i| {
            let m = if i % 3 == 0 { "image" } else { "text" };
            let text = templates[i % templates.len()].replace("{m}", m);
            let q: Vec<f32> = (0..24).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            (text, BTreeMap::from([("q".to_string(), q)]))
        })
        .collect()
}

fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to);
        } else {
            std::fs::copy(entry.path(), to).unwrap();
        }
    }
}

fn files_under(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files_under(&path, root, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

fn persistence() -> Outcome {
    let engine = persistence_engine()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let snap = dir.path().join("snap");
    engine.save(&snap).map_err(|e| e.to_string())?;
    let restored = Engine::load(&snap).map_err(|e| e.to_string())?;
    let queries = fixed_queries();
    let mut results = 0usize;
    for (i, (text, params)) in queries.iter().enumerate() {
        let a = engine.query(text, params).map_err(|e| e.to_string())?;
        let b = restored.query(text, params).map_err(|e| e.to_string())?;
        ensure!(
            a.results == b.results,
            "query {i} differs after restore: {text}"
        );
        results += a.results.len();
    }
    let pending: usize = [Modality::Text, Modality::Image]
        .iter()
        .map(|m| restored.index(m).unwrap().delta_len())
        .sum();
    ensure!(pending > 0, "snapshot carried no delta records");

    let mut files = Vec::new();
    files_under(&snap, &snap, &mut files);
    files.sort();
    let mut loads = 0usize;
    for rel in &files {
        let len = std::fs::metadata(snap.join(rel)).unwrap().len() as usize;
        let mut variants: Vec<(String, Box<dyn Fn(&Path)>)> = vec![
            (
                "deleted".into(),
                Box::new(|p: &Path| std::fs::remove_file(p).unwrap()),
            ),
            (
                "emptied".into(),
                Box::new(|p: &Path| std::fs::write(p, b"").unwrap()),
            ),
            (
                "halved".into(),
                Box::new(move |p: &Path| {
                    let b = std::fs::read(p).unwrap();
                    std::fs::write(p, &b[..len / 2]).unwrap();
                }),
            ),
            (
                "appended".into(),
                Box::new(|p: &Path| {
                    let mut b = std::fs::read(p).unwrap();
                    b.extend_from_slice(b"\x00garbage\xff");
                    std::fs::write(p, b).unwrap();
                }),
            ),
        ];
        for frac in [0usize, 1, 2, 3, 5, 7, 9] {
            let at = (len.saturating_sub(1) * frac) / 9;
            variants.push((
                format!("byte {at} flipped"),
                Box::new(move |p: &Path| {
                    let mut b = std::fs::read(p).unwrap();
                    b[at] ^= 0x5a;
                    std::fs::write(p, b).unwrap();
                }),
            ));
        }
        for (what, corrupt) in &variants {
            let copy = dir.path().join(format!("c{loads}"));
            copy_dir(&snap, &copy);
            corrupt(&copy.join(rel));
            loads += 1;
            match catch_unwind(AssertUnwindSafe(|| Engine::load(&copy))) {
                Ok(Err(_)) => {}
                Ok(Ok(_)) => return Err(format!("{} {what}: restore succeeded", rel.display())),
                Err(_) => return Err(format!("{} {what}: restore panicked", rel.display())),
            }
            std::fs::remove_dir_all(&copy).unwrap();
        }
    }
    Ok(format!(
        "100 queries ({results} results) identical after restore with {pending} pending delta records; \
         {loads} corrupted snapshots across {} files all rejected with typed errors",
        files.len()
    ))
}

// ---------------------------------------------------------------------- tuner

fn ef_star(n: usize) -> f64 {
    10.0 * (n as f64).sqrt()
}

fn tuner_features(n: usize, dim: usize) -> WorkloadFeatures {
    WorkloadFeatures {
        mean: 0.0,
        std: 1.0 / (dim as f64).sqrt(),
        query_norm: 1.0,
        dim,
        n,
        query_rate: 100.0,
        k_typical: 10.0,
    }
}

const TUNER_DIMS: [usize; 3] = [32, 64, 128];

/// Observations over a geometric ef grid. Recall saturates at ef*, latency
/// grows with ef, so each bucket's Pareto label is the first grid point at
/// or above ef*. Training spans N in [10^1.5, 10^4.5] so the held-out points
/// in [10^2, 10^4] are interior.
fn tuner_log() -> TrainingLog {
    let mut log = TrainingLog::new(100.0);
    let grid: Vec<usize> = {
        let mut g = Vec::new();
        let mut ef = EF_RANGE.0 as f64;
        while ef <= EF_RANGE.1 as f64 {
            let v = ef.round() as usize;
            if g.last() != Some(&v) {
                g.push(v);
            }
            ef *= 1.02;
        }
        g
    };
    for b in 15..=45 {
        let n = 10f64.powf(b as f64 / 10.0).ceil() as usize;
        for &dim in &TUNER_DIMS {
            for &ef in &grid {
                log.record(Observation {
                    features: tuner_features(n, dim),
                    m: 16,
                    ef,
                    recall: (ef as f64 / ef_star(n)).min(1.0),
                    latency_ms: 0.01 * ef as f64,
                })
                .expect("valid observation");
            }
        }
    }
    log
}

fn train_tuner() -> Result<TunerModel, hmgi_core::tuner::TunerError> {
    TunerModel::train(&tuner_log(), &ForestParams::default())
}

fn tuner() -> Outcome {
    let model = train_tuner().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut held_out = 0usize;
    for b in 20..40 {
        let n = 10f64.powf((b as f64 + 0.5) / 10.0).round() as usize;
        for &dim in &TUNER_DIMS {
            let p = model.predict(&tuner_features(n, dim));
            let truth = ef_star(n);
            let err = (p.ef as f64 - truth).abs() / truth;
            worst = worst.max(err);
            held_out += 1;
            ensure!(
                err <= 0.25,
                "N={n} d={dim}: predicted ef {} vs {truth:.1}",
                p.ef
            );
        }
    }

    // No model installed: the tuner-on engine must behave exactly like tuner-off.
    let ds = Dataset::from_vectors(Modality::Text, random_vecs(3000, 16, 0x70));
    let off = ds
        .load_into(EngineConfig::default())
        .map_err(|e| e.to_string())?;
    let on = ds
        .load_into(EngineConfig {
            tuner: true,
            ..EngineConfig::default()
        })
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    off.save(&dir.path().join("off"))
        .map_err(|e| e.to_string())?;
    on.save(&dir.path().join("on")).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    files_under(&dir.path().join("off"), &dir.path().join("off"), &mut files);
    let mut compared = 0usize;
    for rel in &files {
        if rel.ends_with("engine.json") {
            continue;
        }
        let a = std::fs::read(dir.path().join("off").join(rel)).unwrap();
        let b = std::fs::read(dir.path().join("on").join(rel)).unwrap();
        ensure!(a == b, "{} differs between tuner on and off", rel.display());
        compared += 1;
    }
    for (i, q) in random_vecs(100, 16, 0x71).into_iter().enumerate() {
        let params = BTreeMap::from([("q".to_string(), q)]);
        let text = "VECTOR_SEARCH(text, $q, k=10) RETURN TOP 10";
        let a = off.query(text, &params).map_err(|e| e.to_string())?;
        let b = on.query(text, &params).map_err(|e| e.to_string())?;
        let la: Vec<String> = a.results.iter().map(|r| r.to_json_line()).collect();
        let lb: Vec<String> = b.results.iter().map(|r| r.to_json_line()).collect();
        ensure!(la == lb, "query {i} differs on the fallback path");
        ensure!(a.stats.ef == b.stats.ef, "query {i}: ef differs");
    }
    Ok(format!(
        "{held_out} held-out points within {:.1}% of 10*sqrt(N) (limit 25%); fallback matched tuner-off \
         on {compared} index files and 100 queries",
        100.0 * worst
    ))
}

// ---------------------------------------------------------------------- driver

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = t.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("[PASS] {name} ({secs:.1}s): {detail}"),
        Err(detail) => format!("[FAIL] {name} ({secs:.1}s): {detail}"),
    };
    // Written past the harness so the line shows even when the test passes.
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
    outcome.is_ok()
}

/// `HMGI_CRITERIA=name,name` runs a subset.
fn selected(name: &str) -> bool {
    std::env::var("HMGI_CRITERIA").map_or(true, |v| v.split(',').any(|s| s.trim() == name))
}

#[test]
fn acceptance_criteria() {
    let (ds, w) = suite_data();
    let raw = std::cell::OnceCell::new();
    let raw = || {
        raw.get_or_init(|| run_suite(&ds, &w, QuantMode::Off))
            .as_ref()
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("ann-fidelity", Box::new(|| ann_fidelity(raw()?))),
        ("exact-regime", Box::new(exact_regime)),
        ("fusion-oracle", Box::new(fusion_oracle_check)),
        ("cost-oracle", Box::new(cost_oracle_check)),
        (
            "quantization",
            Box::new(|| {
                let raw = raw()?;
                let b8 = run_suite(&ds, &w, QuantMode::B8)?;
                quantization(raw, &b8)
            }),
        ),
        ("delta-mvcc", Box::new(delta_mvcc)),
        ("partitioning", Box::new(partitioning)),
        ("fusion-ablation", Box::new(fusion_ablation)),
        ("parser", Box::new(parser)),
        ("persistence", Box::new(persistence)),
        ("tuner", Box::new(tuner)),
    ];
    let mut failed = Vec::new();
    for (name, f) in &criteria {
        if selected(name) && !report(name, f) {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
