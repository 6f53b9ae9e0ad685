use std::path::Path;
use std::process::{Command, Output};

const INTRO: &str = "France hosted the Olympics in Paris.";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_linkforge"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn linkforge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let kb = [
        r#"{"id":"Q90","name":"Paris","description":"Paris is the capital and largest city of France.","aliases":["Paris","City of Light"]}"#,
        r#"{"id":"Q663094","name":"Paris Hilton","description":"Paris Hilton is an American media personality.","aliases":["Paris"]}"#,
        r#"{"id":"Q16555","name":"Paris, Texas","description":"Paris is a city in Lamar County, Texas.","aliases":["Paris"]}"#,
        r#"{"id":"Q142","name":"France","description":"France is a country in Western Europe.","aliases":["France"]}"#,
    ];
    std::fs::write(dir.path().join("kb.jsonl"), kb.join("\n") + "\n").unwrap();
    let tasks = [
        serde_json::json!({"id":"m1","text":INTRO,"mention_start":30,"mention_end":35,"gold_id":"Q90","domain":"geo"}),
        serde_json::json!({"id":"m2","text":"She moved to Paris in Texas last year.","mention_start":13,"mention_end":18,"gold_id":"Q16555","domain":"geo"}),
        serde_json::json!({"id":"m3","text":"France won the match.","mention_start":0,"mention_end":6,"gold_id":"Q142","domain":"sport"}),
        serde_json::json!({"id":"m4","text":"Paris posted a new selfie.","mention_start":0,"mention_end":5,"gold_id":"Q663094","domain":"sport"}),
    ];
    let lines: String = tasks.iter().map(|t| format!("{t}\n")).collect();
    std::fs::write(dir.path().join("tasks.jsonl"), lines).unwrap();
    std::fs::write(dir.path().join("fast.toml"), "[backend.gateway]\nbackoff_base_ms = 1\n").unwrap();
    dir
}

const BATCH: &[&str] = &["--kb", "kb.jsonl", "--tasks", "tasks.jsonl", "--k", "3", "--gate-n", "4"];

#[test]
fn link_intro_example_prints_gold() {
    let dir = fixture();
    let out = run(
        dir.path(),
        &["link", "--kb", "kb.jsonl", "--text", INTRO, "--span", "30:35", "--backend", "mock-oracle"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("[Paris]"), "{text}");
    assert!(text.contains("result: Q90 Paris"), "{text}");
}

#[test]
fn link_with_gold_follows_oracle() {
    let dir = fixture();
    let out = run(
        dir.path(),
        &["link", "--kb", "kb.jsonl", "--text", INTRO, "--span", "30:35", "--backend", "mock-oracle", "--gold", "Q16555"],
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("result: Q16555"));
}

#[test]
fn eval_with_oracle_is_perfect_and_reproducible() {
    let dir = fixture();
    let mut args = vec!["eval", "--backend", "mock-oracle", "--run-dir", "r1"];
    args.extend_from_slice(BATCH);
    let out = run(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["decisions.jsonl", "traces.jsonl", "funnel.json", "metrics.json", "failures.jsonl"] {
        assert!(dir.path().join("r1").join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r1/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["normalized_accuracy"], serde_json::json!(1.0));
    assert_eq!(metrics["overall_accuracy"], serde_json::json!(1.0));

    args[4] = "r2";
    assert!(run(dir.path(), &args).status.success());
    let a = std::fs::read(dir.path().join("r1/metrics.json")).unwrap();
    let b = std::fs::read(dir.path().join("r2/metrics.json")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(dir.path().join("r1/decisions.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("r2/decisions.jsonl")).unwrap();
    assert_eq!(a, b);

    let funnel = run(dir.path(), &["funnel", "--run-dir", "r1"]);
    assert!(funnel.status.success());
    assert!(stdout(&funnel).contains("selection"));
}

#[test]
fn ordering_ablation_csv() {
    let dir = fixture();
    let mut args = vec![
        "ablate",
        "--suite",
        "ordering",
        "--orderings",
        "answer_first,answer_last",
        "--backend",
        "mock-scripted",
        "--mock-script",
        "answer: 1",
        "--run-dir",
        "abl",
    ];
    args.extend_from_slice(BATCH);
    let out = run(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("abl/ordering.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ordering,total,correct,accuracy,gated,selection_accuracy");
    assert!(lines[1].starts_with("answer_first,4,4,1.0,"), "{csv}");
    assert!(lines[2].starts_with("answer_last,4,0,0.0,"), "{csv}");
}

#[test]
fn k_and_variant_suites_write_tables() {
    let dir = fixture();
    let out = run(
        dir.path(),
        &[
            "ablate", "--suite", "k", "--k-values", "1,3", "--backend", "mock-oracle", "--run-dir", "abl", "--kb",
            "kb.jsonl", "--tasks", "tasks.jsonl", "--gate-n", "4",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("abl/k_sweep.csv")).unwrap().lines().count(), 3);

    let mut args = vec!["ablate", "--suite", "variants", "--backend", "mock-oracle", "--run-dir", "abl"];
    args.extend_from_slice(BATCH);
    assert!(run(dir.path(), &args).status.success());
    let csv = std::fs::read_to_string(dir.path().join("abl/variants.csv")).unwrap();
    assert!(csv.contains("no_selection,"));
}

#[test]
fn convert_generic_round_trips() {
    let dir = fixture();
    let out = run(dir.path(), &["convert", "--adapter", "generic_jsonl", "--input", ".", "--out", "conv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(dir.path().join("conv/kb.jsonl")).unwrap(),
        std::fs::read(dir.path().join("kb.jsonl")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = fixture();
    assert!(run(dir.path(), &["--help"]).status.success());
    assert!(run(dir.path(), &["--version"]).status.success());
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    // malformed input
    assert_eq!(run(dir.path(), &["link", "--kb", "missing.jsonl", "--text", "a", "--span", "0:1"]).status.code(), Some(1));
    assert_eq!(
        run(dir.path(), &["link", "--kb", "kb.jsonl", "--text", INTRO, "--span", "30-35"]).status.code(),
        Some(1)
    );
    // unreachable backend
    let out = run(
        dir.path(),
        &["link", "--kb", "kb.jsonl", "--text", INTRO, "--span", "30:35", "--backend", "http", "--endpoint", "http://127.0.0.1:9/v1", "--config", "fast.toml"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let mut args = vec!["eval", "--backend", "http", "--endpoint", "http://127.0.0.1:9/v1", "--config", "fast.toml", "--run-dir", "bad"];
    args.extend_from_slice(BATCH);
    assert_eq!(run(dir.path(), &args).status.code(), Some(2));
}
