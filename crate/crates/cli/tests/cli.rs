use std::path::Path;
use std::process::{Command, Output};

use gesture_core::retarget::{import_animation, TrackFormat};
use serde_json::Value;

fn gesture(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesture"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gesture(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            v.extend(read_dir_bytes(&path));
        } else {
            v.push((path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
        }
    }
    v.sort();
    v
}

#[test]
fn synth_data_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["synth-data", "--out", p(&a), "--clips", "8", "--frames", "30"]);
    ok(&["synth-data", "--out", p(&b), "--clips", "8", "--frames", "30"]);
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    let c = t.path().join("c");
    ok(&["synth-data", "--out", p(&c), "--clips", "8", "--frames", "30", "--seed", "8"]);
    assert_ne!(read_dir_bytes(&a), read_dir_bytes(&c));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(gesture(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(gesture(&["synth-data", "--out", p(t.path()), "--clips", "7"]).status.code(), Some(2));
    let missing = t.path().join("no/such/dir");
    assert_eq!(gesture(&["synth-data", "--out", p(&missing)]).status.code(), Some(1));
    assert_eq!(gesture(&["eval", "--model", p(&missing), "--data", p(&missing)]).status.code(), Some(1));
    assert_eq!(gesture(&["gradcheck", "--eps", "0"]).status.code(), Some(2));
}

#[test]
fn preprocess_reports_provenance() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("c");
    ok(&["synth-data", "--out", p(&corpus), "--clips", "8", "--frames", "30"]);
    let out = t.path().join("p.json");
    let report: Value =
        serde_json::from_str(&ok(&["--json", "preprocess", "--corpus", p(&corpus), "--out", p(&out)])).unwrap();
    assert_eq!(report["method"], "vector");
    assert!(report["provenance"].as_str().unwrap().contains("bone"));
    assert_eq!(report["rotation_flagged"], 0);
    assert_eq!(report["axis_flagged"], 0);
    assert_eq!(report["shoulder_fraction"], 1.0);
    assert_eq!(report["clips"], 8);
    let v: Value = serde_json::from_str(&ok(&["--json", "validate", "--corpus", p(&corpus)])).unwrap();
    assert_eq!(v["valid"], 8);
}

#[test]
fn train_eval_predict_retarget() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("c");
    let data = t.path().join("p.json");
    let model = t.path().join("m.ckpt");
    ok(&["synth-data", "--out", p(&corpus), "--clips", "12", "--frames", "40"]);
    ok(&["preprocess", "--corpus", p(&corpus), "--out", p(&data)]);
    ok(&["train", "--data", p(&data), "--out", p(&model), "--epochs", "3", "--hidden", "8", "--kind", "listening", "--target", "both"]);

    let m: Value = serde_json::from_str(&ok(&["eval", "--model", p(&model), "--data", p(&data), "--per-bone", "--json"])).unwrap();
    assert!(m["L"].as_f64().unwrap().is_finite());
    let s = m["S_C"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&s));
    let belly = m["per_bone"].as_array().unwrap().iter().find(|b| b["bone"] == "belly").unwrap();
    assert_eq!((belly["L"].as_f64(), belly["S_C"].as_f64()), (Some(0.0), Some(1.0)));

    let pred = t.path().join("pred.jsonl");
    let ids: Value = serde_json::from_slice(&std::fs::read(&data).unwrap()).unwrap();
    let clip = ids["split"]["test"][0].as_str().unwrap().to_string();
    ok(&["predict", "--model", p(&model), "--data", p(&data), "--clip", &clip, "--steps", "3", "--out", p(&pred)]);
    // a listening model cannot run from text alone
    assert_eq!(gesture(&["predict", "--model", p(&model), "--text", "hi", "--out", p(&pred)]).status.code(), Some(2));

    for (fmt, format) in [("bone-json", TrackFormat::BoneJson), ("angle-json", TrackFormat::AngleJson)] {
        let track = t.path().join(format!("{fmt}.jsonl"));
        ok(&["retarget", "--input", p(&pred), "--out", p(&track), "--format", fmt, "--substeps", "4"]);
        let (f, tr) = import_animation(&track).unwrap();
        assert_eq!(f, format);
        // 30 frames at stride 10 keep frames 0, 10, 20 and 29
        assert_eq!(tr.len(), 3 * 4 + 1);
    }
}

#[test]
fn train_config_file_and_flags() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("c");
    let data = t.path().join("p.json");
    ok(&["synth-data", "--out", p(&corpus), "--clips", "8", "--frames", "20"]);
    ok(&["preprocess", "--corpus", p(&corpus), "--out", p(&data), "--method", "global"]);
    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 2, "hidden_size": 4, "normalization": "global"}"#).unwrap();
    let model = t.path().join("m.ckpt");
    let s: Value = serde_json::from_str(&ok(&[
        "--json", "--config", p(&cfg), "train", "--data", p(&data), "--out", p(&model), "--epochs", "1",
    ]))
    .unwrap();
    assert_eq!(s["epochs_run"], 1);
    assert_eq!(s["normalization"], "global");
    assert_eq!(s["seed"], 7);
    std::fs::write(&cfg, r#"{"epochs": 1, "hidden_size": 4, "seed": 3}"#).unwrap();
    let s: Value = serde_json::from_str(&ok(&["--json", "--config", p(&cfg), "train", "--data", p(&data), "--out", p(&model)])).unwrap();
    assert_eq!((s["seed"].as_u64(), s["normalization"].as_str()), (Some(3), Some("global")));
    std::fs::write(&cfg, r#"{"normalization": "vector"}"#).unwrap();
    let out = gesture(&["--config", p(&cfg), "train", "--data", p(&data), "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = gesture(&["--config", p(&cfg), "train", "--data", p(&data), "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    // per-bone metrics only make sense for bone vectors
    assert_eq!(gesture(&["eval", "--model", p(&model), "--data", p(&data), "--per-bone"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let r: Value = serde_json::from_str(&ok(&["--json", "gradcheck", "--hidden", "4", "--text-steps", "1"])).unwrap();
    assert_eq!(r["pass"], true);
    assert_eq!(r["models"].as_array().unwrap().len(), 2);
}

#[test]
fn retarget_accepts_keypoint_frames() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("c");
    ok(&["synth-data", "--out", p(&corpus), "--clips", "4", "--frames", "25"]);
    let frames = corpus.join("frames/clip_0000.speaker.jsonl");
    let track = t.path().join("t.jsonl");
    ok(&["retarget", "--input", p(&frames), "--out", p(&track), "--substeps", "2"]);
    let (_, tr) = import_animation(&track).unwrap();
    // keys 0, 10, 20, 24
    assert_eq!(tr.len(), 7);
}
