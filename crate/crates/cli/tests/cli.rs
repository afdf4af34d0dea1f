use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mini")
}

fn sqlaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlaudit")).args(args).output().unwrap()
}

/// Runs against the mini corpus and returns stdout, asserting success.
fn on_mini(args: &[&str]) -> String {
    let dir = fixtures();
    let mut full = vec![
        "--examples".to_string(),
        dir.join("dev.json").display().to_string(),
        "--schemas".to_string(),
        dir.join("tables.json").display().to_string(),
    ];
    full.extend(args.iter().map(|s| s.to_string()));
    let out = Command::new(env!("CARGO_BIN_EXE_sqlaudit")).args(&full).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(sqlaudit(&["--help"]).status.code(), Some(0));
    assert_eq!(sqlaudit(&["--version"]).status.code(), Some(0));
    assert_eq!(sqlaudit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sqlaudit(&["stats"]).status.code(), Some(1), "missing --examples is a usage error");
    let out = sqlaudit(&["--examples", "/nonexistent/dev.json", "stats"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn stats_counts_each_category() {
    let v: Value = serde_json::from_str(&on_mini(&["stats", "--json"])).unwrap();
    let counts: Vec<(String, u64)> = v["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["category"].as_str().unwrap().to_string(), c["count"].as_u64().unwrap()))
        .collect();
    // Hand classification of the twelve fixture queries: Limit1 {0, 7, 10, 11},
    // LimitN {4, 5}, GroupByMisuse {2, 3, 8}, OrderByDistinct {1}; 6 and 9 are clean.
    let expected = [("Limit1", 4), ("LimitN", 2), ("GroupByMisuse", 3), ("OrderByDistinct", 1)];
    assert_eq!(counts, expected.map(|(c, n)| (c.to_string(), n)));
    assert_eq!(v["corpus_size"], 12);
    assert_eq!(v["total"], 10);
    let text = on_mini(&["stats", "--name", "mini"]);
    assert!(text.lines().nth(1).unwrap().starts_with("mini"));
}

#[test]
fn audit_lists_located_findings() {
    let v: Value = serde_json::from_str(&on_mini(&["audit", "--json"])).unwrap();
    let recs = v.as_array().unwrap();
    assert!(recs.iter().any(|r| r["example_id"] == "0" && r["category"] == "Limit1"));
    assert!(recs.iter().all(|r| r["example_id"] != "6" && r["example_id"] != "9"));
    let text = on_mini(&["audit"]);
    assert_eq!(text.lines().count(), recs.len());
}

#[test]
fn rewrite_writes_a_revised_gold_file() {
    let dir = tempfile::tempdir().unwrap();
    let revised = dir.path().join("revised.json");
    let v: Value = serde_json::from_str(&on_mini(&["rewrite", "--json", "--revised", revised.to_str().unwrap()])).unwrap();
    let original: Value = serde_json::from_str(&std::fs::read_to_string(fixtures().join("dev.json")).unwrap()).unwrap();
    let out: Value = serde_json::from_str(&std::fs::read_to_string(&revised).unwrap()).unwrap();
    let (orig, out) = (original.as_array().unwrap(), out.as_array().unwrap());
    assert_eq!(orig.len(), out.len());
    let changed = orig.iter().zip(out).filter(|(a, b)| a["query"] != b["query"]).count() as u64;
    assert_eq!(v["affected"].as_u64().unwrap(), changed);
    assert_ne!(out[0]["query"], orig[0]["query"]);
    assert_eq!(out[6], orig[6]);
}

#[test]
fn eval_and_failures_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let gold = fixtures().join("dev.json");
    let report = dir.path().join("gold.json");
    on_mini(&["eval", "--gold-set", gold.to_str().unwrap(), "--name", "gold", "-o", report.to_str().unwrap()]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["aggregates"]["execution_accuracy"], 100.0);
    assert_eq!(v["aggregates"]["set_match_accuracy"], 100.0);

    let preds = dir.path().join("preds.json");
    std::fs::write(&preds, r#"{"0": "SELECT name FROM stadium", "9": "SELECT 1"}"#).unwrap();
    let weak = dir.path().join("weak.json");
    on_mini(&["eval", "--predictions", preds.to_str().unwrap(), "-o", weak.to_str().unwrap()]);
    let ids = on_mini(&["failures", report.to_str().unwrap(), weak.to_str().unwrap()]);
    assert_eq!(ids.trim(), "", "gold never fails, so the intersection is empty");
    let ids = on_mini(&["failures", weak.to_str().unwrap(), weak.to_str().unwrap()]);
    // Two wrong predictions and ten missing ones: every example fails.
    assert_eq!(ids.lines().count(), 12, "{ids}");
}

#[test]
fn portability_counts_static_violations() {
    let v: Value = serde_json::from_str(&on_mini(&["portability", "--json"])).unwrap();
    assert_eq!(v["corpus_size"], 12);
    assert_eq!(v["mode"], "all");
    let once: Value = serde_json::from_str(&on_mini(&["portability", "--json", "--once"])).unwrap();
    let sum = |r: &Value| r["counts"].as_object().unwrap().values().map(|x| x.as_u64().unwrap()).sum::<u64>();
    assert!(sum(&once) <= sum(&v));
}

#[test]
fn forge_writes_instances() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tie");
    on_mini(&["forge", "--example", "0", "--kind", "tie", "--csv", "--seed", "3", "-o", csv.to_str().unwrap()]);
    assert!(csv.join("stadium.csv").exists());
    let db = dir.path().join("free.sqlite");
    on_mini(&["forge", "--example", "0", "--kind", "tie-free", "-o", db.to_str().unwrap()]);
    assert!(db.metadata().unwrap().len() > 0);

    let dir_s = fixtures();
    let out = Command::new(env!("CARGO_BIN_EXE_sqlaudit"))
        .args(["--examples", dir_s.join("dev.json").to_str().unwrap()])
        .args(["--schemas", dir_s.join("tables.json").to_str().unwrap()])
        .args(["forge", "--example", "6", "-o", dir.path().join("x.sqlite").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "a query without ties cannot be forged");
}

#[test]
fn serve_answers_http() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpStream;
    use std::process::Stdio;

    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sqlaudit"))
        .args(["serve", "--bind", "127.0.0.1:0", "--store"])
        .arg(dir.path().join("events.jsonl"))
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect(&line).to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /sessions/nope/report HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 404"), "{resp}");
    assert!(resp.contains("\"UnknownSession\""), "{resp}");
}
