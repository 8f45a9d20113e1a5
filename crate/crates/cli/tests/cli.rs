use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn xrid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrid"))
        .args(args)
        .env("XRID_WORKDIR", dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = xrid(dir, args);
    assert!(
        out.status.success(),
        "xrid {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Four subjects with 30 s takes, already split.
fn dataset() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--subjects", "4", "--seconds", "30", "--seed", "3"]);
    ok(dir.path(), &["split", "--min-take-seconds", "10"]);
    dir
}

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn br_model_is_unaffected_by_the_scene_offset() {
    let d = dataset();
    ok(d.path(), &["train", "--family", "rf", "--encoding", "br"]);
    let out = ok(d.path(), &["eval", "--offset", "0.5", "0.5", "--max-seconds", "10"]);
    assert!(out.contains("offset (0.5, 0.5)"), "{out}");
    assert_eq!(read(d.path(), "eval/report.json"), read(d.path(), "eval/offset_report.json"));
    assert_eq!(read(d.path(), "eval/vote_curve.csv"), read(d.path(), "eval/offset_vote_curve.csv"));
    assert!(read(d.path(), "eval/vote_curve.csv").starts_with("length_seconds,accuracy\n"));
}

#[test]
fn out_of_range_dropout_in_a_config_is_a_usage_error() {
    let d = dataset();
    let config = r#"{"version": 1, "encoding": "br",
        "data": {"mode": "windowed", "fps_target": 30, "window_size": 100},
        "model": {"family": "rnn", "cell": "lstm", "hidden_size": 50, "layers": 2,
                  "dropout": 0.9, "learning_rate": 0.003, "seed": 0}}"#;
    fs::write(d.path().join("run.json"), config).unwrap();
    let out = xrid(d.path(), &["train", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dropout 0.9 outside [0, 0.6]"), "{}", stderr(&out));
    assert!(!d.path().join("model.json").exists());
}

#[test]
fn flags_override_config_values() {
    let d = dataset();
    let config = r#"{"version": 1, "seed": 5, "encoding": "brv",
        "data": {"mode": "windowed", "fps_target": 30, "window_size": 10},
        "model": {"family": "rnn", "cell": "gru", "hidden_size": 20, "layers": 1,
                  "dropout": 0.0, "learning_rate": 0.003, "seed": 0},
        "train": {"max_epochs": 50, "batch_size": 64, "grace_epochs": 20,
                  "divergence_factor": 2.0, "clip_norm": 5.0, "seed": 0}}"#;
    fs::write(d.path().join("run.json"), config).unwrap();
    ok(
        d.path(),
        &["train", "--config", "run.json", "--hidden-size", "24", "--epochs", "2", "--out", "m/gru.json"],
    );
    let used: serde_json::Value = serde_json::from_str(&read(d.path(), "m/gru.config.json")).unwrap();
    assert_eq!(used["model"]["hidden_size"], 24);
    assert_eq!(used["train"]["max_epochs"], 2);
    assert_eq!(used["encoding"], "brv");
    let log: serde_json::Value = serde_json::from_str(&read(d.path(), "m/gru.log.json")).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);
}

#[test]
fn config_without_version_is_rejected() {
    let d = dataset();
    fs::write(d.path().join("run.json"), r#"{"encoding": "br"}"#).unwrap();
    let out = xrid(d.path(), &["train", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("version"), "{}", stderr(&out));
}

#[test]
fn flag_for_another_family_is_rejected() {
    let d = dataset();
    let out = xrid(d.path(), &["train", "--family", "rf", "--dropout", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--dropout does not apply to rf"), "{}", stderr(&out));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(xrid(d.path(), &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(xrid(d.path(), &["synth", "--subjects", "1"]).status.code(), Some(1));
    let missing = xrid(d.path(), &["split"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("manifest.json"), "{}", stderr(&missing));
    assert_eq!(stderr(&missing).lines().count(), 1);
    assert_eq!(xrid(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn encode_and_sample_write_artifacts() {
    let d = dataset();
    ok(d.path(), &["encode", "--kind", "sr"]);
    let header = read(d.path(), "features/sr/s00/s00_t00.csv");
    assert!(header.starts_with("frame,head_px,"), "{}", &header[..40]);
    let out = ok(d.path(), &["sample", "--kind", "brv", "--role", "test", "--fps", "30", "--window", "10"]);
    assert!(out.contains("samples"), "{out}");
    let samples = read(d.path(), "samples/brv-test.csv");
    // 10 frames x 18 features per sample, plus the label column.
    assert_eq!(samples.lines().next().unwrap().split(',').count(), 1 + 10 * 18);
    let leftovers: Vec<_> = walk(d.path()).into_iter().filter(|p| p.contains(".tmp")).collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    out
}

#[test]
fn search_resumes_and_reports() {
    let d = dataset();
    let args = ["hpo", "--combination", "mlp+br", "--budget", "2", "--epochs", "2", "--seed", "4"];
    let first = ok(d.path(), &args);
    let log = read(d.path(), "hpo/mlp-br-stage1.jsonl");
    assert_eq!(log.lines().count(), 2);
    let second = ok(d.path(), &args);
    assert_eq!(first, second);
    assert_eq!(read(d.path(), "hpo/mlp-br-stage1.jsonl"), log);

    let winner: serde_json::Value = serde_json::from_str(&read(d.path(), "hpo/mlp-br-stage1-best.json")).unwrap();
    assert_eq!(winner["version"], 1);
    assert_eq!(winner["model"]["family"], "mlp");

    ok(d.path(), &["hpo", "--combination", "mlp+br", "--stage", "2", "--epochs", "1", "--seed", "4"]);
    assert_eq!(read(d.path(), "hpo/mlp-br-stage2.jsonl").lines().count(), 8);

    // A different seed disagrees with the logged plan.
    let clash = xrid(d.path(), &["hpo", "--combination", "mlp+br", "--budget", "2", "--epochs", "2", "--seed", "5"]);
    assert!(!clash.status.success());

    ok(d.path(), &["train", "--config", "hpo/mlp-br-stage1-best.json", "--epochs", "2"]);
    ok(d.path(), &["eval", "--max-seconds", "5"]);
    let report = ok(
        d.path(),
        &["report", "--eval", "eval", "--hpo", "hpo/mlp-br-stage1.jsonl", "hpo/mlp-br-stage2.jsonl", "--out", "report.md"],
    );
    assert!(report.contains("| mlp | - |"), "{report}");
    assert!(report.contains("| mlp+br | 1 | 2 |"), "{report}");
    assert!(report.contains("| mlp+br | 2 | 8 |"), "{report}");
    assert_eq!(read(d.path(), "report.md"), report);
}

#[test]
fn imports_a_bvh_directory() {
    let d = tempfile::tempdir().unwrap();
    let clip = "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 100 0\n  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n  JOINT Head\n  {\n    OFFSET 0 60 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n  }\n  JOINT LeftHand\n  {\n    OFFSET 30 20 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n  }\n  JOINT RightHand\n  {\n    OFFSET -30 20 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n  }\n}\nMOTION\nFrames: 2\nFrame Time: 0.0111111\n0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\n1 0 0 0 0 0 0 0 0 0 0 0 0 0 0\n";
    for (subject, take) in [("p1", "a"), ("p1", "b"), ("p2", "a")] {
        let dir = d.path().join("bvh").join(subject);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(format!("{take}.bvh")), clip).unwrap();
    }
    fs::write(d.path().join("single.txt"), "p1/b\n").unwrap();
    let joints = ["--head", "Head", "--left", "LeftHand", "--right", "RightHand"];
    let mut args = vec!["import", "--bvh-dir", "bvh", "--single-subject", "single.txt"];
    args.extend(joints);
    let out = ok(d.path(), &args);
    assert!(out.contains("imported 3 takes of 2 subjects"), "{out}");
    let manifest: serde_json::Value = serde_json::from_str(&read(d.path(), "data/manifest.json")).unwrap();
    let p1 = &manifest["subjects"][0]["takes"];
    assert_eq!(p1[0]["two_subject_scene"], true);
    assert_eq!(p1[1]["two_subject_scene"], false);

    let bad = xrid(d.path(), &["import", "--bvh-dir", "bvh", "--head", "Skull"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("Skull"), "{}", stderr(&bad));
}
