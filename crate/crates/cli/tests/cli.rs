use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn salm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = salm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small fixture plus a config writing to `run`.
fn setup(dir: &Path, run: &str) -> PathBuf {
    let data = dir.join("data/fx.jsonl");
    if !data.exists() {
        ok(&["synthgen", "template", "--samples-per-class", "20", "--seed", "3", "--out", data.to_str().unwrap()]);
    }
    let cfg = dir.join(format!("{run}.json"));
    fs::write(
        &cfg,
        format!(
            r#"{{"dataset": {{"path": "data/fx.jsonl", "classes": "data/fx.classes.json"}},
                "split": {{"temporal": {{"cutoff": "2024-01-01"}}}},
                "stage1": {{"epochs": 2}}, "stage2": {{"epochs": 2}},
                "output_dir": "{run}"}}"#
        ),
    )
    .unwrap();
    cfg
}

fn full_run(cfg: &Path) {
    let c = cfg.to_str().unwrap();
    ok(&["prepare", "-c", c]);
    ok(&["train", "-c", c]);
    ok(&["evaluate", "-c", c]);
    for m in ["tfidf-rf", "supervised", "knn"] {
        ok(&["baseline", "-c", c, "--method", m]);
    }
}

#[test]
fn workflow_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (setup(dir.path(), "a"), setup(dir.path(), "b"));
    full_run(&a);
    full_run(&b);
    let (ra, rb) = (dir.path().join("a"), dir.path().join("b"));
    for f in [
        "splits/train.jsonl",
        "splits/test.jsonl",
        "model/text_encoder.ckpt",
        "model/payload_encoder.ckpt",
        "model/prototypes.json",
        "predictions/salm.jsonl",
        "predictions/tfidf-rf.jsonl",
        "predictions/supervised.jsonl",
        "predictions/knn.jsonl",
        "reports/salm.json",
        "reports/knn.json",
        "comparison/table.csv",
        "comparison/per_class_f1.csv",
    ] {
        let (x, y) = (fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap());
        assert!(x == y, "{f} differs between identical runs");
    }
    let table = fs::read_to_string(ra.join("comparison/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,accuracy,macro_f1");
    assert!(lines[1].starts_with("salm,"));
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("relative improvement,"));

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(ra.join("manifests/train.json")).unwrap()).unwrap();
    assert!(manifest["artifacts"].as_array().unwrap().len() >= 5);
    assert!(manifest["seeds"]["stage1"].is_u64());

    // External predictions go through the same join as internal ones.
    let c = a.to_str().unwrap();
    let preds = ra.join("predictions/knn.jsonl");
    ok(&["evaluate", "-c", c, "--predictions", preds.to_str().unwrap(), "--method", "knn-again"]);
    let x: serde_json::Value = serde_json::from_slice(&fs::read(ra.join("reports/knn.json")).unwrap()).unwrap();
    let y: serde_json::Value = serde_json::from_slice(&fs::read(ra.join("reports/knn-again.json")).unwrap()).unwrap();
    assert_eq!(x["accuracy"], y["accuracy"]);

    // Classification and projection on the trained model.
    let input = dir.path().join("new.json");
    ok(&["synthgen", "template", "--samples-per-class", "2", "--seed", "8", "--out", input.to_str().unwrap()]);
    let out = dir.path().join("pred.jsonl");
    ok(&["classify", "-c", c, "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let pred = fs::read_to_string(&out).unwrap();
    assert_eq!(pred.lines().count(), 22);
    let first: serde_json::Value = serde_json::from_str(pred.lines().next().unwrap()).unwrap();
    assert_eq!(first["ranking"].as_array().unwrap().len(), 11);
    ok(&["project", "-c", c]);
    let pca = fs::read_to_string(ra.join("projection/pca.csv")).unwrap();
    assert!(pca.starts_with("id,class,kind,x,y\n"));
    assert_eq!(pca.lines().filter(|l| l.contains(",star,")).count(), 11);
}

#[test]
fn mismatched_predictions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "m");
    let c = cfg.to_str().unwrap();
    ok(&["prepare", "-c", c]);
    let p = dir.path().join("p.jsonl");
    fs::write(&p, "{\"id\":\"not-a-test-id\",\"class_id\":1,\"class\":\"Backdoor\"}\n").unwrap();
    let out = salm(&["evaluate", "-c", c, "--predictions", p.to_str().unwrap(), "--method", "x"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no prediction for test payload"), "{}", stderr(&out));
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"dataset": {"path": "absent.jsonl"}, "split": {"temporal": {"cutoff": "2024-01-01"}}, "output_dir": "o"}"#)
        .unwrap();
    let out = salm(&["prepare", "-c", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("absent.jsonl"));
}

#[test]
fn stage_two_needs_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "s");
    let out = salm(&["train", "-c", cfg.to_str().unwrap(), "--stage", "2"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("stage-1"), "{}", stderr(&out));
}

#[test]
fn unknown_baseline_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "u");
    let out = salm(&["baseline", "-c", cfg.to_str().unwrap(), "--method", "lstm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tfidf-rf"));
}

#[test]
fn locked_output_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "l");
    fs::create_dir_all(dir.path().join("l")).unwrap();
    fs::write(dir.path().join("l/.salm.lock"), "").unwrap();
    let out = salm(&["prepare", "-c", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("lock"), "{}", stderr(&out));
}

#[test]
fn llm_mode_without_credential_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_salm"))
        .args(["synthgen", "llm", "--class", "XSS", "--out"])
        .arg(dir.path().join("x.json"))
        .env_clear()
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!dir.path().join("x.json").exists());
}
