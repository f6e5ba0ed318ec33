use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn imu_align(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imu-align"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = imu_align(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(args: &[&str]) -> Value {
    let out = imu_align(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().expect("error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn log_lines(run: &Path) -> usize {
    std::fs::read_to_string(run.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .count()
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();
    let train = ok_json(&[
        "train",
        "--synth",
        "--classes",
        "8",
        "--pairs",
        "512",
        "--epochs",
        "20",
        "--out",
        r,
    ]);
    let epochs = train["state"]["epochs_run"].as_u64().unwrap() as usize;
    assert!((1..=20).contains(&epochs));
    assert_eq!(log_lines(&run), epochs);
    for f in [
        "config.json",
        "splits.json",
        "checkpoint.cmar",
        "embeddings/test.imu.cmeb",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    let report = ok_json(&["report", r]);
    assert_eq!(report["probes"].as_array().unwrap().len(), 3);
    assert_eq!(report["raw_encoder_probes"].as_array().unwrap().len(), 3);
    assert!(report["combination"]
        .as_array()
        .unwrap()
        .iter()
        .any(|row| row["w_vision"] == 0.8 && row["w_imu"] == 0.2));
    let first = std::fs::read(run.join("report.json")).unwrap();
    ok_json(&["report", r]);
    assert_eq!(first, std::fs::read(run.join("report.json")).unwrap());

    let probe = ok_json(&["probe", "--run", r]);
    assert_eq!(probe["probes"].as_array().unwrap().len(), 3);
    let retrieval = ok_json(&["retrieve", "--run", r]);
    assert_eq!(retrieval.as_array().unwrap().len(), 2);
    let pooled = ok_json(&["combine", "--run", r, "--weights", "0.8,0.2"]);
    assert!(Path::new(pooled["path"].as_str().unwrap()).is_file());
    let latent = ok_json(&["combine", "--run", r, "--latent"]);
    assert_eq!(latent["latent"], true);
    let tsne = ok_json(&["tsne", "--run", r, "--perplexity", "10"]);
    assert_eq!(tsne[0]["name"], "tsne");
    let csv = std::fs::read_to_string(run.join("tsne.csv")).unwrap();
    assert!(csv.starts_with("id,label,x,y\n"));
    assert!(csv.contains("/video,") && csv.contains("/imu,"));
    let embed = ok_json(&["embed", "--run", r, "--modality", "video", "--part", "val"]);
    assert!(embed["rows"].as_u64().unwrap() > 0);
}

#[test]
fn max_epochs_one_logs_one_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("one");
    ok_json(&[
        "train",
        "--synth",
        "--classes",
        "4",
        "--pairs",
        "64",
        "--max-epochs",
        "1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(log_lines(&run), 1);
}

#[test]
fn synth_cache_trains_like_any_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = dir.path().join("run");
    let s = ok_json(&[
        "synth",
        "--classes",
        "4",
        "--pairs",
        "64",
        "--out",
        cache.to_str().unwrap(),
    ]);
    assert_eq!(s["n_samples"], 64);
    let t = ok_json(&[
        "train",
        "--cache",
        cache.to_str().unwrap(),
        "--classes",
        "4",
        "--epochs",
        "1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(
        t["n_train"].as_u64().unwrap()
            + t["n_val"].as_u64().unwrap()
            + t["n_test"].as_u64().unwrap(),
        64
    );
}

#[test]
fn report_lists_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let e = err_json(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(e["code"], "missing_artifacts");
    let missing: Vec<&str> = e["context"]["missing"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(missing.contains(&"checkpoint.cmar"));
    assert!(missing.iter().any(|m| m.ends_with("train.imu.cmeb")));
}

#[test]
fn errors_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let e = err_json(&[
        "train",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(e["code"], "invalid_config");
    assert!(e["message"].as_str().unwrap().contains("bad.json"));

    let missing = dir.path().join("nope.jsonl");
    let e = err_json(&[
        "preprocess",
        "--manifest",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(e["context"]["path"]
        .as_str()
        .unwrap()
        .ends_with("nope.jsonl"));
}

#[test]
fn progress_lines_are_plain_without_a_terminal() {
    let dir = tempfile::tempdir().unwrap();
    let out = imu_align(&[
        "synth",
        "--pairs",
        "32",
        "--classes",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains('\x1b'));
}
