//! Drives the `gesturelab` binary through every subcommand on a tiny run.

use std::path::Path;
use std::process::Command;

fn gesturelab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gesturelab"))
        .args(args)
        .env("GESTURELAB_THREADS", "1")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn ok(args: &[&str]) -> String {
    let (code, text) = gesturelab(args);
    assert_eq!(code, 0, "{args:?}: {text}");
    text
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"{
  "data": {"classes": 2, "sequences_per_mode": 2, "seconds": 4.0},
  "model": {"hidden": 12, "code_dim": 4, "blocks": 2},
  "train": {"batch_size": 2, "crop_frames": 24, "steps": 3},
  "eval": {"runs": 2}
}"#;

#[test]
fn every_subcommand_round_trips_through_files() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let config = r.join("run.json");
    std::fs::write(&config, CONFIG).unwrap();
    let (data, train, gen, eval, edit, ablate) =
        (r.join("data"), r.join("train"), r.join("gen"), r.join("eval"), r.join("edit"), r.join("ablate"));

    ok(&["synth-data", "--config", s(&config), "--out", s(&data)]);
    let manifest = data.join("manifest.json");
    assert!(manifest.exists() && data.join("c0_m0_000.wav").exists());

    ok(&["train", "--config", s(&config), "--data", s(&manifest), "--out", s(&train)]);
    let ckpt = train.join("checkpoint.glck");
    let log = std::fs::read_to_string(train.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 1);

    // Resume to step 5, appending to the same log.
    ok(&["train", "--config", s(&config), "--data", s(&manifest), "--steps", "5", "--resume", s(&ckpt), "--out", s(&train)]);

    let wav = data.join("c1_m1_001.wav");
    ok(&["generate", "--config", s(&config), "--checkpoint", s(&ckpt), "--audio", s(&wav), "--runs", "2", "--seed", "4", "--out", s(&gen)]);
    for seed in [4, 5] {
        let text = std::fs::read_to_string(gen.join(format!("motion_seed{seed}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["frames"].as_array().unwrap().len(), 120);
    }
    let feats = data.join("c1_m1_001.mel.f64");
    ok(&["generate", "--config", s(&config), "--checkpoint", s(&ckpt), "--features", s(&feats), "--out", s(&gen)]);

    ok(&["evaluate", "--config", s(&config), "--checkpoint", s(&ckpt), "--data", s(&manifest), "--out", s(&eval)]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"], 2);
    let csv = std::fs::read_to_string(eval.join("report.csv")).unwrap();
    assert!(csv.starts_with("config,l1,pck,diversity,multimodality,mode_coverage\ndiversity,"));

    let reference = data.join("c1_m0_000.motion.json");
    ok(&[
        "edit", "--config", s(&config), "--checkpoint", s(&ckpt), "--audio", s(&wav), "--reference", s(&reference),
        "--t-start", "30", "--n-frames", "40", "--out", s(&edit),
    ]);
    assert!(edit.join("edited.json").exists());
    let (code, _) = gesturelab(&[
        "edit", "--config", s(&config), "--checkpoint", s(&ckpt), "--audio", s(&wav), "--reference", s(&reference),
        "--t-start", "100", "--n-frames", "40", "--out", s(&edit),
    ]);
    assert_ne!(code, 0);

    ok(&["ablate", "--config", s(&config), "--data", s(&manifest), "--steps", "2", "--out", s(&ablate)]);
    let table = std::fs::read_to_string(ablate.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["baseline", "split", "mapping", "bicycle", "diversity"]);

    for dir in [&data, &train, &gen, &eval, &edit, &ablate] {
        assert!(dir.join("run_manifest.json").exists(), "{}", dir.display());
    }
}

#[test]
fn exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("o");
    assert_eq!(gesturelab(&["train", "--bogus"]).0, 2);
    let missing = root.path().join("nope.json");
    assert_eq!(gesturelab(&["train", "--data", s(&missing), "--out", s(&out)]).0, 4);

    let spec = gesturelab::data::SynthSpec {
        classes: 2,
        sequences_per_mode: 2,
        seconds: 2.0,
        ..Default::default()
    };
    let manifest = gesturelab::data::generate_synthetic(&spec).unwrap().save(&root.path().join("d")).unwrap();
    let bad = root.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
    assert_eq!(gesturelab(&["train", "--config", s(&bad), "--data", s(&manifest), "--out", s(&out)]).0, 2);
    let unknown = root.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"trian": {}}"#).unwrap();
    assert_eq!(gesturelab(&["train", "--config", s(&unknown), "--data", s(&manifest), "--out", s(&out)]).0, 2);
}
