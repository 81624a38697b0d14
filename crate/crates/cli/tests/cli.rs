use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hmgi(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmgi"))
        .env("HMGI_DATA_DIR", data)
        .args(args)
        .output()
        .expect("spawn hmgi")
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = hmgi(data, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn query_vector(dim: usize) -> String {
    (0..dim)
        .map(|i| format!("{}", (i as f32 * 0.37).sin()))
        .collect::<Vec<_>>()
        .join(",")
}

const QUERY: &str = "VECTOR_SEARCH(text, $q, k=5) TRAVERSE hops=1 RETURN TOP 8";

#[test]
fn ingest_build_query_explain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    ok(
        data,
        &["ingest", "--dataset", "synth:400,1200", "--seed", "3"],
    );
    assert!(data.join("store/engine.json").exists());
    // Querying before a build is refused.
    let q = format!("q={}", query_vector(64));
    assert!(!hmgi(data, &["query", QUERY, "--param", &q])
        .status
        .success());

    ok(data, &["build"]);
    let out = ok(data, &["query", QUERY, "--param", &q]);
    let rows: Vec<Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!rows.is_empty() && rows.len() <= 8);
    let scores: Vec<f64> = rows.iter().map(|r| r["S"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let out = ok(
        data,
        &["query", QUERY, "--param", &q, "--k", "2", "--hops", "0"],
    );
    assert_eq!(out.lines().count(), 2);

    let text = ok(data, &["explain", QUERY, "--weights", "3,1"]);
    assert!(text.contains("v=0.75 g=0.25"), "{text}");
    assert!(text.contains("vector-first"));
    assert!(text.contains("coefficients"));
}

#[test]
fn snapshot_and_restore() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let snap = dir.path().join("snap");
    let q = format!("q={}", query_vector(64));
    ok(&data, &["build", "--dataset", "synth:300,900"]);
    let before = ok(&data, &["query", QUERY, "--param", &q]);
    ok(&data, &["snapshot", snap.to_str().unwrap()]);
    ok(
        &data,
        &["build", "--dataset", "synth:200,400", "--seed", "9"],
    );
    assert_ne!(ok(&data, &["query", QUERY, "--param", &q]), before);
    ok(&data, &["restore", snap.to_str().unwrap()]);
    assert_eq!(ok(&data, &["query", QUERY, "--param", &q]), before);

    // A damaged snapshot is rejected and the store is left alone.
    let manifest = snap.join("engine.json");
    let mut bytes = std::fs::read(&manifest).unwrap();
    bytes[10] ^= 0x20;
    std::fs::write(&manifest, bytes).unwrap();
    let out = hmgi(&data, &["restore", snap.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(ok(&data, &["query", QUERY, "--param", &q]), before);
}

#[test]
fn bench_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    let vectors: Vec<Vec<f32>> = (0..300)
        .map(|i| (0..8).map(|j| ((i * 7 + j * 3) as f32).sin()).collect())
        .collect();
    let base = data.join("base.fvecs");
    let queries = data.join("queries.fvecs");
    hmgi_core::bench::write_fvecs(&base, &vectors).unwrap();
    hmgi_core::bench::write_fvecs(&queries, &vectors[..20]).unwrap();
    let csv = data.join("out.csv");
    let args = [
        "bench",
        "--dataset",
        base.to_str().unwrap(),
        "--workload",
        queries.to_str().unwrap(),
        "--k",
        "5",
        "--ef",
        "300",
        "--trials",
        "2",
        "--quant",
        "8",
        "--csv",
        csv.to_str().unwrap(),
    ];
    let out = ok(data, &args);
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert!(report["recall_at_k"].as_f64().unwrap() > 0.9, "{report}");
    ok(data, &args);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");

    let out = ok(
        data,
        &[
            "bench-update",
            "--dataset",
            base.to_str().unwrap(),
            "--workload",
            queries.to_str().unwrap(),
            "--churn",
            "0.2",
            "--trials",
            "1",
        ],
    );
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert!(report.is_object());
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path();
    for args in [
        vec!["query", QUERY],
        vec!["ingest"],
        vec!["ingest", "--dataset", "/no/such/file.jsonl"],
        vec!["bench", "--dataset", "synth:10,10"],
        vec!["restore", "/no/such/dir"],
        vec!["build", "--quant", "3"],
        vec!["build", "--weights", "1"],
        vec!["frobnicate"],
    ] {
        let out = hmgi(data, &args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
    ok(data, &["ingest", "--dataset", "synth:50,100"]);
    ok(data, &["build"]);
    let out = hmgi(data, &["query", "VECTOR_SEARCH(text, $q k=5) RETURN TOP 3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("1:"));
}
