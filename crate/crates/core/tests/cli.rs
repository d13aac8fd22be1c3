mod common;

use std::path::Path;
use std::process::{Command, Output};

use airkit::harness::eval_prompts;
use airkit::llm::BackendConfig;
use airkit::ragstore::{load_questions, ChunkIndex};

fn airkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airkit"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AIRKIT_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn waterfill_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.json"), r#"{"cnrs": [2, 1], "budget_mw": 1}"#).unwrap();
    std::fs::write(d.join("u.json"), r#"{"powers_mw": [0.5, 0.5]}"#).unwrap();
    std::fs::write(d.join("bad.json"), r#"{"powers_mw": [0.5]}"#).unwrap();
    std::fs::write(d.join("oracle.json"), r#"{"kind": "oracle_waterfill"}"#).unwrap();

    let o = airkit(&["waterfill", "--problem", "p.json"], d);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["powers_mw"], serde_json::json!([0.75, 0.25]));

    let o = airkit(&["waterfill", "--problem", "p.json", "--proposed", "u.json", "--out", "wf"], d);
    assert_eq!(o.status.code(), Some(4));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("wf/verdict.json")).unwrap()).unwrap();
    assert_eq!(v["verdict"], "suboptimal");
    assert!((v["gap_bits"].as_f64().unwrap() - 0.058894).abs() < 1e-6);
    assert!(d.join("wf/manifest.json").exists());

    let o = airkit(&["waterfill", "--problem", "p.json", "--backend", "oracle.json"], d);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"optimal\""));

    assert_eq!(airkit(&["waterfill", "--problem", "p.json", "--proposed", "bad.json"], d).status.code(), Some(2));
    assert_eq!(airkit(&["waterfill", "--problem", "missing.json"], d).status.code(), Some(2));
    assert_eq!(airkit(&["roc", "--noise-dbm", "x"], d).status.code(), Some(2));
}

#[test]
fn roc_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = airkit(
        &["roc", "--noise-dbm", "-100", "--snr-db", "0", "--n", "50", "--pf", "0.5", "--trials", "1", "--seed", "2", "--out", "r"],
        d,
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(d.join("r/roc.csv")).unwrap();
    assert!(csv.starts_with("snr_db,n,pf_target,method,pd,pf,trials,half_width\n"));
    assert!(csv.lines().nth(1).unwrap().ends_with(",1,0.98"));

    let o = airkit(&["reproduce", "--manifest", "r/manifest.json", "--out", "r2"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    // tampering with the recorded digest is detected
    let text = std::fs::read_to_string(d.join("r/manifest.json")).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"]["roc.csv"] = "00".into();
    std::fs::write(d.join("r/tampered.json"), m.to_string()).unwrap();
    let o = airkit(&["reproduce", "--manifest", "r/tampered.json", "--out", "r3"], d);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("MISMATCH roc.csv"));
}

#[test]
fn rag_ingest_query_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (docs, needles) = common::needle_corpus();
    common::write_docs(&d.join("docs.json"), &docs);

    let o = airkit(&["rag", "ingest", "--docs", "docs.json", "--index", "idx/index.json"], d);
    assert_eq!(o.status.code(), Some(2), "index directory does not exist yet");
    std::fs::create_dir(d.join("idx")).unwrap();
    let o = airkit(&["rag", "ingest", "--docs", "docs.json", "--index", "idx/index.json"], d);
    assert_eq!(o.status.code(), Some(0));
    assert!(d.join("idx/manifest.json").exists());

    let (query, doc_id) = &needles[3];
    let o = airkit(&["rag", "query", "--index", "idx/index.json", "--query", query, "--k", "3"], d);
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.starts_with("1\t") && first.contains(doc_id.as_str()), "{first}");

    let questions_path = common::fixture("mixed_questions.json");
    let questions = load_questions(&questions_path).unwrap();
    let index = ChunkIndex::load(&d.join("idx/index.json")).unwrap();
    let backend = BackendConfig::replay(d.join("replay.jsonl"));
    let prompts = eval_prompts(Some(&index), &questions, 2).unwrap();
    common::write_replay(&d.join("replay.jsonl"), &backend, &prompts, &common::fixture_replies("mixed_replies.json"));
    std::fs::write(d.join("backend.json"), serde_json::to_string(&backend).unwrap()).unwrap();

    let q = questions_path.to_str().unwrap();
    let o = airkit(
        &["rag", "eval", "--questions", q, "--index", "idx/index.json", "--backend", "backend.json", "--k", "2", "--transcript", "t.jsonl", "--out", "ev"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("Overall") && l.ends_with("70.00%")), "{table}");
    let t = std::fs::read_to_string(d.join("t.jsonl")).unwrap();
    assert_eq!(t.lines().count(), 11);

    // the pure-LLM baseline sends different prompts, so the replay misses
    let o = airkit(&["rag", "eval", "--questions", q, "--no-rag", "--backend", "backend.json", "--out", "ev2"], d);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sense_bench_with_replay_misses_keeps_energy_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.jsonl"), "{\"format\": \"airkit-transcript\", \"version\": 1}\n").unwrap();
    let cfg = serde_json::json!({
        "snr_db_list": [-6.0, 0.0],
        "backend": {"kind": "replay_file", "replay_path": "empty.jsonl"}
    });
    std::fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    let o = airkit(&["sense-bench", "--config", "cfg.json", "--out", "sb", "--trials", "200"], d);
    assert_eq!(o.status.code(), Some(3));
    let csv = std::fs::read_to_string(d.join("sb/sense_bench.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",energy,")).count(), 2);
    assert_eq!(csv.lines().filter(|l| l.contains(",llm,")).count(), 0);
    let manifest = std::fs::read_to_string(d.join("sb/manifest.json")).unwrap();
    assert!(manifest.contains("\"error\""));
}

#[test]
fn credentials_never_reach_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let secret = "sk-cli-secret-value-123";
    std::fs::write(d.join("p.json"), r#"{"cnrs": [2, 1], "budget_mw": 1}"#).unwrap();
    // port 9 on loopback refuses connections; only the configuration matters here
    let backend = serde_json::json!({
        "kind": "http",
        "endpoint_url": "http://127.0.0.1:9/v1/chat/completions",
        "auth_token_env": "AIRKIT_CLI_TEST_TOKEN",
        "max_retries": 0
    });
    std::fs::write(d.join("http.json"), backend.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_airkit"))
        .args(["waterfill", "--problem", "p.json", "--backend", "http.json", "--out", "w"])
        .current_dir(d)
        .env("AIRKIT_CLI_TEST_TOKEN", secret)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let mut seen = String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr);
    for entry in walk(d) {
        seen.push_str(&String::from_utf8_lossy(&std::fs::read(entry).unwrap()));
    }
    assert!(!seen.contains(secret));

    let o = airkit(&["waterfill", "--problem", "p.json", "--backend", "http.json"], d);
    assert_eq!(o.status.code(), Some(2), "missing credential is a configuration error");
    assert!(String::from_utf8_lossy(&o.stderr).contains("AIRKIT_CLI_TEST_TOKEN"));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
