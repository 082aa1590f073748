use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use vbones::skeleton::{enumerate_paths, BoneSet, VirtualConfigName};

fn vbones(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbones"))
        .current_dir(cwd)
        .env("VBONES_NUM_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = vbones(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_inputs(dir: &Path) {
    fs::write(
        dir.join("spec.json"),
        r#"{"subjects":["S1","S9"],"actions_per_subject":2,"cameras":1,"frames_per_sequence":30}"#,
    )
    .unwrap();
    fs::write(
        dir.join("run.json"),
        r#"{"model":{"hidden_width":16,"num_random_frames":4},"training":{"epochs":2,"batch_size":16}}"#,
    )
    .unwrap();
}

fn synth(dir: &Path) {
    write_inputs(dir);
    ok(dir, &["synth", "--config", "spec.json", "--seed", "3", "--out", "data"]);
}

#[test]
fn synth_train_eval_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let index = json(dir.join("data/index.json"));
    assert!(index.to_string().contains("S9"));

    ok(dir, &["train", "--config", "run.json", "--data", "data", "--virtual", "VB5", "--out", "run"]);
    for f in ["config.json", "train_log.jsonl", "model.ckpt", "epochs.json", "manifest.json"] {
        assert!(dir.join("run").join(f).is_file(), "missing {f}");
    }
    let epochs = json(dir.join("run/epochs.json"));
    assert_eq!(epochs.as_array().unwrap().len(), 2);

    ok(dir, &["eval", "--data", "data", "--checkpoint", "run/model.ckpt", "--out", "ev"]);
    let report = json(dir.join("ev/report.json"));
    let p1 = report["aggregate"]["protocol1"].as_f64().unwrap();
    let p2 = report["aggregate"]["protocol2"].as_f64().unwrap();
    assert!(p1.is_finite() && p1 > 0.0 && p2 <= p1);
    let per_joint = fs::read_to_string(dir.join("ev/per_joint.csv")).unwrap();
    assert_eq!(per_joint.lines().count(), 18);
    assert!(per_joint.starts_with("joint,mpjpe_mm"));
    let per_frame = fs::read_to_string(dir.join("ev/per_frame.csv")).unwrap();
    assert_eq!(per_frame.lines().count(), 1 + 2 * 30);

    ok(dir, &["plot", "--log", "run/train_log.jsonl", "--eval", "ev", "--out", "plots"]);
    for f in ["training_curves.png", "per_joint_error.png", "per_frame_error.png", "projection_cases.png"] {
        let bytes = fs::read(dir.join("plots").join(f)).unwrap();
        assert_eq!(&bytes[1..4], b"PNG", "{f}");
    }
}

#[test]
fn eval_of_ground_truth_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(dir, &["eval", "--data", "data", "--pred", "data", "--out", "ev"]);
    let agg = &json(dir.join("ev/report.json"))["aggregate"];
    for key in ["protocol1", "protocol2", "protocol3", "mpjve"] {
        assert!(agg[key].as_f64().unwrap().abs() < 1e-6, "{key} = {}", agg[key]);
    }
}

#[test]
fn manifest_hashes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let manifest = json(dir.join("data/manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 3);
    let config_hash = hex(&serde_json::to_vec(&manifest["config"]).unwrap());
    assert_eq!(manifest["config_sha256"].as_str().unwrap(), config_hash);
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(artifacts.iter().any(|a| a["path"] == "index.json"));
    for a in artifacts {
        let bytes = fs::read(dir.join("data").join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex(&bytes));
    }
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn same_seed_reproduces_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(dir, &["synth", "--config", "spec.json", "--seed", "3", "--out", "again"]);
    let a = json(dir.join("data/manifest.json"));
    let b = json(dir.join("again/manifest.json"));
    assert_eq!(a["artifacts"], b["artifacts"]);
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let out = vbones(dir, &["synth", "--config", "spec.json", "--out", "data"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("error: kind=")), "{stderr}");
    ok(dir, &["synth", "--config", "spec.json", "--out", "data", "--force"]);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vbones(tmp.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = vbones(tmp.path(), &["train", "--data", "x", "--out", "y", "--frames", "27"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_reports_a_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vbones(tmp.path(), &["eval", "--data", "nowhere", "--pred", "nowhere", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().find(|l| l.starts_with("error: kind=")).unwrap();
    assert!(line.contains("msg="), "{line}");
}

#[test]
fn paths_match_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let set = BoneSet::standard(VirtualConfigName::VB5).unwrap();
    let wrist = set.topology().joint_index("right_wrist").unwrap();
    for cap in [5, 6, 8] {
        let stdout = ok(
            tmp.path(),
            &["paths", "--config", "VB5", "--joint", "right_wrist", "--max-edges", &cap.to_string()],
        );
        let expected = enumerate_paths(&set, wrist, cap).unwrap().paths.len();
        let lines = stdout.lines().filter(|l| l.contains("->") || l.contains("~>")).count();
        assert_eq!(lines, expected, "cap {cap}:\n{stdout}");
    }
    let by_index = ok(tmp.path(), &["paths", "--config", "VB5", "--joint", &wrist.to_string(), "--max-edges", "6"]);
    let by_name = ok(tmp.path(), &["paths", "--config", "VB5", "--joint", "right_wrist", "--max-edges", "6"]);
    assert_eq!(by_index, by_name);
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("small.json"), r#"{"model":{"hidden_width":32}}"#).unwrap();
    ok(dir, &["gradcheck", "--config", "small.json", "--num-params", "16", "--out", "gc"]);
    let report = json(dir.join("gc/gradcheck.json"));
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn tiny_ablation_has_ten_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    fs::write(
        dir.join("tiny.json"),
        r#"{"model":{"hidden_width":8,"num_random_frames":3},"training":{"epochs":1,"batch_size":32}}"#,
    )
    .unwrap();
    ok(dir, &["ablate", "--config", "tiny.json", "--data", "data", "--seeds", "1", "--out", "abl"]);
    let rows = json(dir.join("abl/ablation.json"));
    let rows = rows.as_array().or_else(|| rows["rows"].as_array()).unwrap();
    assert_eq!(rows.len(), 10);
    let table = fs::read_to_string(dir.join("abl/ablation.txt")).unwrap();
    for name in ["VB0", "VB5", "VB10", "VB13", "VB23"] {
        assert!(table.contains(name), "{table}");
    }
}
