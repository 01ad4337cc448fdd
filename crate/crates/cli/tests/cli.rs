use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const CONFIG: &str = r#"
format_version = 1

[model]
levels = 2
layers = 1
channels = 2
lstm_size = 8
concat_size = 8
input_side = 6

[train]
workers = 2
t_max = 5
episodes_per_task = 3
seed = 4

[[tasks]]
name = "aim"
tier = 1
width = 6
height = 6
render_side = 6
episode_cap = 12

[[tasks]]
name = "dodge"
tier = 2
width = 6
height = 6
render_side = 6
episode_cap = 12

[metrics]
eval_episodes = 4
seeds = [0]
greedy = false
"#;

fn gtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtn"))
        .args(args)
        .env_remove("GTN_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run gtn")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = gtn(args);
    assert!(
        out.status.success(),
        "gtn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn artifact_sha(m: &Value, kind: &str) -> String {
    m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["kind"] == kind)
        .unwrap_or_else(|| panic!("no {kind} artifact"))["sha256"]
        .as_str()
        .unwrap()
        .to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("run");
    let o = run_ok(&["train", "--config", s(&cfg), "--out", s(&out), "--checkpoint-every", "2"]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("manifest\t"));

    assert!(out.join("model.gtn").is_file());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert!(!log.trim().is_empty());
    for line in log.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
    let m = manifest(&out);
    assert_eq!(m["command"], "train");
    assert_eq!(m["architecture"], "GTN");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["artifacts"].as_array().unwrap().iter().any(|a| a["kind"] == "snapshot"));
}

#[test]
fn every_output_file_is_listed_in_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("run");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&out), "--checkpoint-every", "2"]);
    let m = manifest(&out);
    let listed: BTreeSet<String> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap().to_string())
        .collect();
    let on_disk: BTreeSet<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    assert_eq!(listed, on_disk);
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        let digest = sha2_hex(&bytes);
        assert_eq!(a["sha256"].as_str().unwrap(), digest);
    }
}

fn sha2_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    format!("{:x}", Sha256::digest(bytes))
}

#[test]
fn single_worker_runs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let one_task = CONFIG.split("[[tasks]]\nname = \"dodge\"").next().unwrap().to_string()
        + "[metrics]\neval_episodes = 4\n";
    let cfg = write_config(tmp.path(), &one_task);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["train", "--config", s(&cfg), "--out", s(out), "--workers", "1", "--seed", "9"]);
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(artifact_sha(&ma, "checkpoint"), artifact_sha(&mb, "checkpoint"));
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("t_max = 5", "t_max = 5\nlearning_rat = 0.1"));
    let out = tmp.path().join("run");
    let o = gtn(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("learning_rat"), "{err}");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn invalid_override_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let o = gtn(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("r")), "--workers", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("workers"));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_gtn"))
        .args(["train", "--config", s(&cfg)])
        .env("GTN_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn eval_needs_references_unless_scores_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let train = tmp.path().join("train");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&train)]);
    let ckpt = train.join("model.gtn");

    let missing = tmp.path().join("missing");
    let o = gtn(&["eval", "--config", s(&cfg), "--out", s(&missing), "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("--reference") && err.contains("--scores-only"), "{err}");
    assert!(!missing.join("manifest.json").exists());

    let scores = tmp.path().join("scores");
    run_ok(&["eval", "--config", s(&cfg), "--out", s(&scores), "--checkpoint", s(&ckpt), "--scores-only"]);
    assert_eq!(
        header(&scores.join("scores.csv")),
        "task_id,task_name,episodes,mean_raw,std_error,baseline,mean_adjusted,greedy,seed"
    );
    assert!(!scores.join("rfs.csv").exists());
    let rows = csv_rows(&scores.join("scores.csv"));
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["aim", "dodge"]);

    let rfs = tmp.path().join("rfs");
    run_ok(&[
        "eval", "--config", s(&cfg), "--out", s(&rfs), "--checkpoint", s(&ckpt),
        "--reference", s(&scores.join("manifest.json")),
    ]);
    assert_eq!(header(&rfs.join("rfs.csv")), "task_id,task_name,multi_score,single_score,rfs,defined");
    for row in csv_rows(&rfs.join("rfs.csv")) {
        assert_eq!(row[2], row[3], "self comparison scores differ");
        if row[5] == "true" {
            assert!((row[4].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        } else {
            assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn eval_rejects_an_incompatible_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let train = tmp.path().join("train");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&train)]);
    let other = write_config(
        &std::fs::create_dir_all(tmp.path().join("o")).map(|_| tmp.path().join("o")).unwrap(),
        &CONFIG
            .replace("input_side = 6", "input_side = 8")
            .replace("render_side = 6", "render_side = 8"),
    );
    let o = gtn(&[
        "eval", "--config", s(&other), "--out", s(&tmp.path().join("e")),
        "--checkpoint", s(&train.join("model.gtn")), "--scores-only",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("e");
    let o = gtn(&[
        "eval", "--config", s(&cfg), "--out", s(&out),
        "--checkpoint", s(&tmp.path().join("nope.gtn")), "--scores-only",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn ablate_writes_one_row_per_cell_and_mode() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("ablate");
    run_ok(&["ablate", "--config", s(&cfg), "--out", s(&out), "--levels", "1,2", "--layers", "1,2", "--episodes", "2"]);
    assert_eq!(header(&out.join("ablation.csv")), "mode,levels,layers,seed,mean_rfs,defined_tasks");
    let rows = csv_rows(&out.join("ablation.csv"));
    for mode in ["single", "multi"] {
        assert_eq!(rows.iter().filter(|r| r[0] == mode).count(), 4, "{mode}");
    }
    assert_eq!(header(&out.join("ablation_summary.csv")), "mode,levels,layers,seeds,mean_rfs");
    assert_eq!(csv_rows(&out.join("ablation_summary.csv")).len(), 8);
}

#[test]
fn raps_has_a_row_per_count_and_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("seeds = [0]", "seeds = [0, 1]"));
    let out = tmp.path().join("raps");
    run_ok(&["raps", "--config", s(&cfg), "--out", s(&out), "--episodes", "2"]);
    assert_eq!(
        header(&out.join("raps.csv")),
        "task_count,seed,defined,clean_score,aps_1,aps_2,raps_1,raps_2"
    );
    assert_eq!(csv_rows(&out.join("raps.csv")).len(), 2 * 2);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("raps_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["task_counts"], serde_json::json!([1, 2]));
}

#[test]
fn raps_episode_axis_needs_snapshots() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("raps");
    let o = gtn(&["raps", "--config", s(&cfg), "--out", s(&out), "--episode-axis"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());

    run_ok(&["raps", "--config", s(&cfg), "--out", s(&out), "--episode-axis", "--checkpoint-every", "2"]);
    assert!(header(&out.join("raps_episodes.csv")).starts_with("seed,episodes,update_counter,defined,clean_score"));
    assert!(!csv_rows(&out.join("raps_episodes.csv")).is_empty());
}

#[test]
fn baseline_is_single_level_and_tagged() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let gtn_run = tmp.path().join("gtn");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&gtn_run)]);
    let gtn_scores = tmp.path().join("gtn-scores");
    run_ok(&[
        "eval", "--config", s(&cfg), "--out", s(&gtn_scores),
        "--checkpoint", s(&gtn_run.join("model.gtn")), "--scores-only",
    ]);

    let out = tmp.path().join("baseline");
    let o = run_ok(&[
        "baseline", "--config", s(&cfg), "--out", s(&out),
        "--compare", s(&gtn_scores.join("scores.csv")),
        "--reference", s(&gtn_scores.join("manifest.json")),
    ]);
    assert!(String::from_utf8(o.stderr).unwrap().contains("overriding model.levels"));
    let m = manifest(&out);
    assert_eq!(m["architecture"], "MT-A3C-surrogate");
    assert_eq!(m["command"], "baseline");
    let saved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(saved.contains("levels = 1"));
    assert_eq!(
        header(&out.join("comparison.csv")),
        "task_id,task_name,gtn_score,baseline_score,single_score,gtn_rfs,baseline_rfs,rfs_delta"
    );
    assert_eq!(csv_rows(&out.join("comparison.csv")).len(), 2);
}
