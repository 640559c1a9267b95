use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn doiminer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doiminer"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
seed = 3
[paths]
corpus = "data/corpus.jsonl"
ground_truth = "data/labels.csv"
output_dir = "run"
[prep]
ngram_max = 1
[factorize]
k_grid = [3, 6, 9]
[assign]
mode = "hard"
[analyze.assortativity]
rewirings = 3
"#;

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    ok(&doiminer(&["synth", "-d", "data", "--dyads", "1000", "--users", "700"], tmp.path()));
    fs::write(tmp.path().join("run.toml"), CONFIG).unwrap();
    tmp
}

#[test]
fn run_then_report() {
    let tmp = workspace();
    let stdout = ok(&doiminer(&["run", "-c", "run.toml"], tmp.path()));
    assert!(stdout.contains("3 domains of interaction"), "{stdout}");
    assert!(stdout.contains("match (soft mode)"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"].as_array().unwrap().len(), 8);
    let report = ok(&doiminer(&["report", "run"], tmp.path()));
    assert!(report.contains("selected k ="));
}

#[test]
fn flags_override_config() {
    let tmp = workspace();
    let stdout = ok(&doiminer(&["config", "-c", "run.toml", "--seed", "9", "--k-grid", "4,5", "--no-eval"], tmp.path()));
    assert!(stdout.contains("seed = 9"), "{stdout}");
    assert!(stdout.contains("k_grid = [4, 5]"), "{stdout}");
    let eval = stdout.split("[eval]").nth(1).unwrap();
    assert!(eval.trim_start().starts_with("enabled = false"), "{stdout}");
}

#[test]
fn report_omits_match_when_eval_disabled() {
    let tmp = workspace();
    let stdout = ok(&doiminer(&["run", "-c", "run.toml", "--no-eval"], tmp.path()));
    assert!(!stdout.contains("match ("), "{stdout}");
    assert!(stdout.contains("network:"));
}

#[test]
fn stage_from_copied_artifacts_matches_full_run() {
    let tmp = workspace();
    ok(&doiminer(&["run", "-c", "run.toml"], tmp.path()));
    let iso = tmp.path().join("iso");
    fs::create_dir(&iso).unwrap();
    for f in ["graph_edges.tsv", "graph_nodes.tsv"] {
        fs::copy(tmp.path().join("run").join(f), iso.join(f)).unwrap();
    }
    ok(&doiminer(&["detect", "-c", "run.toml", "-o", "iso"], tmp.path()));
    assert_eq!(
        fs::read(tmp.path().join("run/partition.tsv")).unwrap(),
        fs::read(iso.join("partition.tsv")).unwrap()
    );
    for f in ["partition.tsv", "w.txt", "vocabulary.tsv", "buckets.jsonl"] {
        fs::copy(tmp.path().join("run").join(f), iso.join(f)).unwrap();
    }
    ok(&doiminer(&["assign", "-c", "run.toml", "-o", "iso"], tmp.path()));
    assert_eq!(
        fs::read(tmp.path().join("run/assignments.jsonl")).unwrap(),
        fs::read(iso.join("assignments.jsonl")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let tmp = workspace();
    let missing = doiminer(&["run", "--corpus", "nope.jsonl", "-o", "x"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));
    let bad_theta = doiminer(&["run", "-c", "run.toml", "--theta", "2"], tmp.path());
    assert_eq!(bad_theta.status.code(), Some(2));
    fs::write(tmp.path().join("bad.toml"), "seed = [").unwrap();
    assert_eq!(doiminer(&["run", "-c", "bad.toml"], tmp.path()).status.code(), Some(2));

    fs::write(tmp.path().join("bad.jsonl"), "{\"id\": 1\n").unwrap();
    let data = doiminer(&["ingest", "--corpus", "bad.jsonl", "-o", "bad"], tmp.path());
    assert_eq!(data.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&data.stderr).contains("bad.jsonl: line 1"));

    let no_graph = doiminer(&["detect", "-o", "empty"], tmp.path());
    assert_eq!(no_graph.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&no_graph.stderr).contains("graph_edges.tsv"));
}
