use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hmgi_core::bench::{
    data_dir, generate_synthetic_kg, load_bvecs, load_fvecs, load_graph_jsonl, run_on_engine,
    run_update_benchmark, write_csv, BenchConfig, ChurnMix, Dataset, SynthConfig, UpdateConfig,
    Workload,
};
use hmgi_core::engine::{Engine, EngineConfig, QuantMode};
use hmgi_core::graph::Direction;
use hmgi_core::query::{HybridQueryAst, TraversalClause, Weights};
use hmgi_core::tuner::TunerModel;
use hmgi_core::Modality;

#[derive(Debug, Parser)]
#[command(name = "hmgi", version, about = "Hybrid graph + vector index engine")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Load a dataset into the store without building indexes.
    Ingest,
    /// Build indexes for the stored graph, or for --dataset when given.
    Build,
    /// Run a query and print one JSON line per result.
    Query(QueryArgs),
    /// Benchmark --dataset against --workload and report metrics.
    Bench,
    /// Benchmark staged writes interleaved with queries.
    BenchUpdate {
        /// Fraction of the dataset rewritten.
        #[arg(long, default_value_t = 0.1)]
        churn: f64,
    },
    /// Print the chosen plan and both pipeline costs.
    Explain(QueryArgs),
    /// Copy the store to a snapshot directory.
    Snapshot { dir: PathBuf },
    /// Replace the store with a verified snapshot.
    Restore { dir: PathBuf },
}

#[derive(Debug, Args)]
struct QueryArgs {
    text: String,
    /// Binds a query parameter: name=x1,x2,...
    #[arg(long = "param", value_name = "NAME=VECTOR")]
    params: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
struct Opts {
    /// Graph JSONL, .fvecs or .bvecs file, or synth:NODES,EDGES.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Workload JSON, or .fvecs/.bvecs of query vectors.
    #[arg(long, global = true)]
    workload: Option<PathBuf>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    ef: Option<usize>,
    #[arg(long, global = true)]
    hops: Option<usize>,
    #[arg(long, global = true, value_name = "V,G", value_parser = parse_weights)]
    weights: Option<(f64, f64)>,
    #[arg(long, global = true, value_name = "4|8|16|off|adaptive")]
    quant: Option<QuantMode>,
    #[arg(long, global = true)]
    no_partition: bool,
    #[arg(long, global = true)]
    no_fusion: bool,
    #[arg(long, global = true)]
    no_delta: bool,
    #[arg(long, global = true, value_enum)]
    tuner: Option<Toggle>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Append metrics to this CSV file.
    #[arg(long, global = true, value_name = "PATH")]
    csv: Option<PathBuf>,
    #[arg(long, global = true)]
    trials: Option<usize>,
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (v, g) = s
        .split_once(',')
        .ok_or_else(|| format!("expected V,G, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("weight v: {e}"))?;
    let g: f64 = g.trim().parse().map_err(|e| format!("weight g: {e}"))?;
    if !(v >= 0.0 && g >= 0.0 && v + g > 0.0) {
        return Err("weights must be non-negative and not both zero".into());
    }
    Ok((v, g))
}

fn parse_param(s: &str) -> Result<(String, Vec<f32>)> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--param expects NAME=x1,x2,..., got '{s}'"))?;
    let v = values
        .split(',')
        .map(|x| x.trim().parse::<f32>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("parameter '{name}'"))?;
    Ok((name.trim_start_matches('$').to_string(), v))
}

impl Opts {
    fn engine_config(&self) -> EngineConfig {
        let base = EngineConfig::default();
        EngineConfig {
            partitioning: !self.no_partition,
            fusion: !self.no_fusion,
            delta: !self.no_delta,
            tuner: self.tuner == Some(Toggle::On),
            quant: self.quant.unwrap_or(base.quant),
            seed: self.seed.unwrap_or(base.seed),
            ..base
        }
    }

    fn dataset(&self) -> Result<(String, Dataset)> {
        let spec = self
            .dataset
            .as_deref()
            .ok_or_else(|| anyhow!("--dataset is required"))?;
        if let Some(rest) = spec.strip_prefix("synth:") {
            let (n, e) = rest
                .split_once(',')
                .ok_or_else(|| anyhow!("synthetic dataset expects synth:NODES,EDGES"))?;
            let config = SynthConfig {
                nodes: n.trim().parse().context("node count")?,
                edges: e.trim().parse().context("edge count")?,
                seed: self.seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            return Ok((format!("synth-{n}-{e}"), generate_synthetic_kg(&config)?));
        }
        let path = Path::new(spec);
        let name = path
            .file_stem()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        let ds = match extension(path).as_deref() {
            Some("fvecs") => Dataset::from_vectors(Modality::Text, load_fvecs(path)?),
            Some("bvecs") => Dataset::from_vectors(Modality::Text, load_bvecs(path)?),
            _ => load_graph_jsonl(path)?,
        };
        Ok((name, ds))
    }

    fn workload(&self, ds: &Dataset) -> Result<Workload> {
        let path = self
            .workload
            .as_deref()
            .ok_or_else(|| anyhow!("--workload is required"))?;
        let k = self.k.unwrap_or(10);
        let modality = || {
            ds.modalities
                .first()
                .map(|(m, _)| m.clone())
                .ok_or_else(|| anyhow!("dataset has no modality"))
        };
        let mut w = match extension(path).as_deref() {
            Some("fvecs") => Workload::vector_queries(modality()?, load_fvecs(path)?, k),
            Some("bvecs") => Workload::vector_queries(modality()?, load_bvecs(path)?, k),
            _ => Workload::load(path)?,
        };
        for q in &mut w.queries {
            if let Some(k) = self.k {
                q.k = k;
            }
            if let Some(h) = self.hops {
                q.hops = h;
            }
            if let Some(weights) = self.weights {
                q.weights = weights;
            }
        }
        if let Some(t) = self.trials {
            w.trials = t;
        }
        w.validate()?;
        Ok(w)
    }

    /// Applies --k, --ef, --hops and --weights to a parsed query.
    fn apply(&self, ast: &mut HybridQueryAst) {
        if let Some(k) = self.k {
            ast.vector.k = k;
        }
        if let Some(ef) = self.ef {
            ast.vector.ef = Some(ef);
        }
        if let Some(h) = self.hops {
            match &mut ast.traversal {
                Some(t) => t.hops = h,
                None if h > 0 => {
                    ast.traversal = Some(TraversalClause {
                        hops: h,
                        edge_types: None,
                        direction: Direction::Out,
                    })
                }
                None => {}
            }
        }
        if let Some((v, g)) = self.weights {
            ast.weights = Weights::normalized(v, g);
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn store_dir() -> PathBuf {
    data_dir().join("store")
}

fn tuner_model_path() -> PathBuf {
    data_dir().join("tuner.forest")
}

fn open_store() -> Result<Engine> {
    let dir = store_dir();
    if !dir.join("engine.json").exists() {
        bail!(
            "no store at {}; run `hmgi ingest --dataset ...` first",
            dir.display()
        );
    }
    Engine::load(&dir).with_context(|| format!("loading store {}", dir.display()))
}

/// Fresh engine for `config`, with the trained tuner model when one is saved.
fn new_engine(config: EngineConfig) -> Result<Engine> {
    let engine = Engine::new(config);
    let path = tuner_model_path();
    if config.tuner && path.exists() {
        engine.tuner().install(TunerModel::load(&path)?);
    }
    Ok(engine)
}

fn save_store(engine: &Engine) -> Result<()> {
    let dir = store_dir();
    let tmp = dir.with_extension("new");
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    engine.save(&tmp)?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::rename(&tmp, &dir)?;
    Ok(())
}

fn run_query(opts: &Opts, args: &QueryArgs, explain: bool) -> Result<()> {
    let engine = open_store()?;
    let mut ast = engine.parse(&args.text)?;
    opts.apply(&mut ast);
    let plan = engine.plan(&ast)?;
    if explain {
        print!("{}", plan.explain());
        return Ok(());
    }
    let params: BTreeMap<String, Vec<f32>> = args
        .params
        .iter()
        .map(|p| parse_param(p))
        .collect::<Result<_>>()?;
    let out = engine.execute_plan(&plan, &params)?;
    for r in &out.results {
        println!("{}", r.to_json_line());
    }
    Ok(())
}

fn bench_config(opts: &Opts, name: &str) -> BenchConfig {
    let mut cfg = BenchConfig::new("hmgi", name, opts.engine_config());
    cfg.ef = opts.ef;
    cfg.trials = opts.trials;
    cfg.cache_dir = Some(data_dir().join("gt-cache"));
    cfg
}

fn run(cli: Cli) -> Result<()> {
    let opts = &cli.opts;
    match &cli.verb {
        Verb::Ingest => {
            let (name, ds) = opts.dataset()?;
            let engine = new_engine(opts.engine_config())?;
            ds.ingest_into(&engine)?;
            save_store(&engine)?;
            eprintln!(
                "ingested {name}: {} nodes, {} edges into {}",
                ds.len(),
                ds.edges.len(),
                store_dir().display()
            );
        }
        Verb::Build => {
            let t = Instant::now();
            let engine = match opts.dataset {
                Some(_) => {
                    let (_, ds) = opts.dataset()?;
                    let engine = new_engine(opts.engine_config())?;
                    ds.ingest_into(&engine)?;
                    engine
                }
                None => open_store()?,
            };
            engine.vacuum()?;
            engine.build()?;
            save_store(&engine)?;
            let mem = engine.memory_report();
            eprintln!(
                "built {} vectors in {:.2}s ({} embedding bytes, {} graph bytes)",
                mem.vectors,
                t.elapsed().as_secs_f64(),
                mem.embedding_payload_bytes + mem.descriptor_bytes,
                mem.index_graph_bytes
            );
        }
        Verb::Query(args) => run_query(opts, args, false)?,
        Verb::Explain(args) => run_query(opts, args, true)?,
        Verb::Bench => {
            let (name, ds) = opts.dataset()?;
            let w = opts.workload(&ds)?;
            let cfg = bench_config(opts, &name);
            let t = Instant::now();
            let engine = new_engine(cfg.engine)?;
            ds.ingest_into(&engine)?;
            engine.build()?;
            let out = run_on_engine(&engine, &ds, &w, &cfg, t.elapsed())?;
            println!("{}", serde_json::to_string(&out.report)?);
            if let Some(path) = &opts.csv {
                write_csv(path, &[out.report])?;
            }
        }
        Verb::BenchUpdate { churn } => {
            let (name, ds) = opts.dataset()?;
            let w = opts.workload(&ds)?;
            let report = run_update_benchmark(
                &ds,
                &w,
                &UpdateConfig {
                    bench: bench_config(opts, &name),
                    churn: *churn,
                    mix: ChurnMix::default(),
                    seed: opts.seed.unwrap_or(42),
                },
            )?;
            println!("{}", serde_json::to_string(&report)?);
            if let Some(path) = &opts.csv {
                report.write_csv(path)?;
            }
        }
        Verb::Snapshot { dir } => {
            open_store()?.save(dir)?;
            eprintln!("snapshot written to {}", dir.display());
        }
        Verb::Restore { dir } => {
            let engine =
                Engine::load(dir).with_context(|| format!("restoring from {}", dir.display()))?;
            save_store(&engine)?;
            eprintln!("store restored from {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
