use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn conflation(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conflation"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONFLATION_OUT_DIR")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn canonical_analyze_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = conflation(&["canonical-analyze", "--m", "20", "--epsilon", "0.0666666666666666667", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let doc = read_json(&out.join("canonical.json"));
    assert!((doc["closed_form_gain"].as_f64().unwrap() - 19.0 / 17.0).abs() < 1e-12);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "canonical-analyze");
    assert_eq!(manifest["schema_version"], 1);
    assert!(out.join("mdp.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let res = conflation(&["learn", "--m", "5", "--epsilon", "0.2", "--n", "2000", "--seed", "7", "--l2", "0.001", "--out", out.to_str().unwrap()], dir.path());
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["learned.json", "dataset.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(conflation(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(conflation(&["canonical-analyze", "--m", "abc", "--out", out], dir.path()).status.code(), Some(2));
    assert_eq!(conflation(&["canonical-analyze", "--m", "20", "--epsilon", "1.5", "--out", out], dir.path()).status.code(), Some(3));
    assert_eq!(conflation(&["theorem-check", "--out", out], dir.path()).status.code(), Some(2));
    assert_eq!(conflation(&["learn", "--mdp", "missing.json", "--out", out], dir.path()).status.code(), Some(3));
    assert_eq!(conflation(&["--help"], dir.path()).status.code(), Some(0));
    let res = conflation(&["theorem-check", "--theorem", "2", "--m", "20", "--epsilon", "0.0666666666666666667", "--out", out], dir.path());
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(summary(&res)["holds"], true);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"command": "pipeline", "m": 3.0, "epsilon": 0.5}"#).unwrap();
    let out = dir.path().join("o");
    let res = conflation(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let doc = read_json(&out.join("pipeline.json"));
    assert_eq!(doc["params"]["m"], 3.0);

    let res = conflation(&["--config", config.to_str().unwrap(), "pipeline", "--m", "20", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(res.status.code(), Some(0));
    let doc = read_json(&out.join("pipeline.json"));
    assert_eq!(doc["params"]["m"], 20.0);
    assert_eq!(doc["params"]["epsilon"], 0.5);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["m"], 20.0);

    fs::write(&config, r#"{"command": "pipeline", "bogus": 1}"#).unwrap();
    assert_eq!(conflation(&["--config", config.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("env_out");
    let res = Command::new(env!("CARGO_BIN_EXE_conflation"))
        .args(["geometry", "--m", "20", "--epsilon", "0.2", "--beta", "0.5"])
        .current_dir(dir.path())
        .env("CONFLATION_OUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let geo = read_json(&target.join("geometry.json"));
    assert_eq!(geo["proxy_past_normal"], true);

    let res = conflation(&["canonical-analyze", "--m", "4", "--epsilon", "0.3"], dir.path());
    assert_eq!(res.status.code(), Some(0));
    assert!(dir.path().join("out").join("canonical.json").exists());
}

#[test]
fn sweep_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let res = conflation(&["sweep", "--m-grid", "2:20:4", "--epsilon-grid", "0.1:0.5:3", "--learned", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("m,epsilon,threshold,proxy_policy,true_gain,aligned_gain,misaligned"));

    let res = conflation(&["conflation-decompose", "--m", "20", "--epsilon", "0.1", "--beta", "0.3", "--c", "2", "--k", "-14", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(res.status.code(), Some(0));
    let doc = read_json(&out.join("decomposition.json"));
    let report = if doc.get("report").is_some() { &doc["report"] } else { &doc };
    assert!((report["beta"].as_f64().unwrap() - 0.3).abs() < 1e-9, "{doc}");
}
