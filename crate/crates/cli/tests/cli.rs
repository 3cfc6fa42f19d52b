use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn evmod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evmod"))
        .args(args)
        .env_remove("EVMOD_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn synth(dir: &Path, name: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    assert!(evmod(&["synth", name, "--out", &s(&out)]).status.success());
    out
}

#[test]
fn synth_writes_four_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "clean-4");
    let b = dir.path().join("again");
    assert!(evmod(&["synth", "clean-4", "--out", &s(&b)]).status.success());
    for f in ["events.csv", "frames.txt", "truth.json", "scene.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.join("truth.json"))["format_version"], 1);
}

#[test]
fn invalid_spec_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "clean-2");
    let mut spec = json(&scene.join("scene.json"));
    spec["objects"][0]["velocity"] = serde_json::json!([9000.0, 0.0]);
    let spec_path = dir.path().join("bad.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let out = dir.path().join("never");
    let res = evmod(&["synth", "--spec", &s(&spec_path), "--out", &s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(evmod(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(evmod(&["detect", "--knn", "many", "--out", "x"]).status.code(), Some(1));
    assert_eq!(evmod(&["--help"]).status.code(), Some(0));
    assert_eq!(evmod(&["detect", "--out", &s(dir.path())]).status.code(), Some(1));
    let missing = dir.path().join("missing.csv");
    let res = evmod(&["detect", "--events", &s(&missing), "--frames", &s(&missing), "--out", &s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));

    let events = dir.path().join("events.csv");
    let frames = dir.path().join("frames.txt");
    std::fs::write(&events, "100,400,7,1\n").unwrap();
    std::fs::write(&frames, "1000\n").unwrap();
    let res = evmod(&["detect", "--events", &s(&events), "--frames", &s(&frames), "--out", &s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("out of bounds"));
}

#[test]
fn detect_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "clean-2");
    let run = dir.path().join("run");
    let res = evmod(&[
        "detect",
        "--events", &s(&scene.join("events.csv")),
        "--frames", &s(&scene.join("frames.txt")),
        "--truth", &s(&scene.join("truth.json")),
        "--sample-size", "800",
        "--render",
        "--dump-graph",
        "--out", &s(&run),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["config"]["sample_size"], 800);
    assert_eq!(manifest["windows"].as_array().unwrap().len(), 10);
    assert!(manifest["windows"][0]["alpha"].as_f64().unwrap() > 0.0);
    let selection = json(&run.join("selection.json"));
    assert!(selection["windows"].as_array().unwrap().iter().all(|w| w["chosen_f"] == 2));
    assert!(selection["windows"][0]["evaluated"]["20"].is_number());
    assert!(run.join("render/window_0001.ppm").exists());
    assert!(run.join("graphs/window_0001.edges").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().ends_with("1.000000,1.000000,1.000000"));

    let eval_dir = dir.path().join("eval");
    let res = evmod(&[
        "eval",
        "--detections", &s(&run.join("detections.json")),
        "--truth", &s(&scene.join("truth.json")),
        "--out", &s(&eval_dir),
    ]);
    assert!(res.status.success());
    assert_eq!(json(&eval_dir.join("matches.json"))["totals"]["tp"], 20);

    let images = dir.path().join("images");
    let res = evmod(&[
        "render",
        "--labels", &s(&run.join("labels.csv")),
        "--detections", &s(&run.join("detections.json")),
        "--out", &s(&images),
    ]);
    assert!(res.status.success());
    let ppm = std::fs::read(images.join("window_0003.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n346 260\n255\n"));
    assert_eq!(ppm.len(), "P6\n346 260\n255\n".len() + 346 * 260 * 3);
}

#[test]
fn eval_against_itself_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "clean-4");
    let truth = s(&scene.join("truth.json"));
    let out = dir.path().join("self");
    let res = evmod(&["eval", "--detections", &truth, "--truth", &truth, "--out", &s(&out)]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("P=1.0000 R=1.0000 F=1.0000"));

    let mut empty = json(&scene.join("truth.json"));
    for w in empty["windows"].as_array_mut().unwrap() {
        w["boxes"] = serde_json::json!([]);
    }
    let empty_path = dir.path().join("empty.json");
    std::fs::write(&empty_path, empty.to_string()).unwrap();
    let out = dir.path().join("empty");
    assert!(evmod(&["eval", "--detections", &s(&empty_path), "--truth", &truth, "--out", &s(&out)]).status.success());
    let m = json(&out.join("matches.json"));
    assert_eq!(m["recall"], 0.0);
    assert_eq!(m["totals"]["fn"], 40);

    let mut short = empty.clone();
    short["windows"].as_array_mut().unwrap().pop();
    std::fs::write(&empty_path, short.to_string()).unwrap();
    let res = evmod(&["eval", "--detections", &s(&empty_path), "--truth", &truth, "--out", &s(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn saturated_sampling_runs_on_full_windows() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "clean-2");
    let run = dir.path().join("run");
    let res = evmod(&[
        "detect",
        "--events", &s(&scene.join("events.csv")),
        "--frames", &s(&scene.join("frames.txt")),
        "--sample-size", "1000000",
        "--f-max", "4",
        "--out", &s(&run),
    ]);
    assert!(res.status.success());
    let manifest = json(&run.join("manifest.json"));
    for w in manifest["windows"].as_array().unwrap() {
        assert_eq!(w["events"], w["sampled"]);
    }
}
