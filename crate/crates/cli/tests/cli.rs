use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn base_config(dir: &Path) -> Value {
    let r = root();
    json!({
        "task": r.join("tasks/store_drawer.json"),
        "seed": 3,
        "out_dir": dir.join("out"),
        "dataset": { "n_scenes": 4 },
        "embeddings": {
            "vision": r.join("fixtures/store_drawer_vision.json"),
            "language": r.join("fixtures/store_drawer_language.json"),
            "text": r.join("fixtures/intent_text_embeddings.json"),
        },
        "eval": { "n_pairs": 20, "seeds": [0] },
    })
}

fn write(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn gift(config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gift"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(code(&gift(None, &["gen"])), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gift(Some(&dir.path().join("nope.json")), &["gen"])), 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path());
    cfg["backend"] = json!({ "kind": "oracle", "temprature": 0.1 });
    let path = write(dir.path(), "cfg.json", &cfg);
    let out = gift(Some(&path), &["gen"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stages_out_of_order_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "cfg.json", &base_config(dir.path()));
    let out = gift(Some(&path), &["learn"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gift gen"));
}

#[test]
fn full_pipeline_succeeds_and_replay_miss_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("intent_only.jsonl");
    let mut cfg = base_config(dir.path());
    cfg["backend"] = json!({ "kind": "oracle", "record": record });
    for stage in ["gen", "learn", "intent", "align", "eval", "bound-check", "report"] {
        // Only intent calls are recorded; alignment is redone below.
        let mut stage_cfg = cfg.clone();
        if stage != "intent" {
            stage_cfg["backend"] = json!({ "kind": "oracle" });
        }
        let p = write(dir.path(), "stage.json", &stage_cfg);
        let out = gift(Some(&p), &[stage]);
        assert_eq!(code(&out), 0, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out_dir = dir.path().join("out");
    for f in ["reward_model.json", "intent.json", "alignment.json", "report.json", "pairs.csv", "bound.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    // The recording holds intent responses only, so alignment misses.
    cfg["backend"] = json!({ "kind": "replay", "replay": record });
    let replay = write(dir.path(), "replay.json", &cfg);
    let out = gift(Some(&replay), &["align"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unmet_expectations_are_invariant_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path());
    cfg["methods"] = json!(["ground_truth", "all_distractor"]);
    cfg["expect"] = json!({ "min_win_rate": { "all_distractor": 0.99 } });
    let path = write(dir.path(), "cfg.json", &cfg);
    for stage in ["gen", "learn", "eval"] {
        let out = gift(Some(&path), &[stage]);
        assert_eq!(code(&out), 0, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = gift(Some(&path), &["report"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
