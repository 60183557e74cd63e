//! The compiled binary's exit codes and diagnostics.

use std::process::Command;

fn draovg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_draovg")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let help = draovg(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("gen-synthetic"));

    let unknown = draovg(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let missing = draovg(&["--out", out, "classify-viewpoint", "--manifest", "nope.jsonl", "--disc", "nope.json"]);
    assert_eq!(missing.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error:"));
}

#[test]
fn synthetic_to_labeled_banks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();
    let run = |args: &[&str]| {
        let mut full = vec!["--out", out];
        full.extend_from_slice(args);
        let o = draovg(&full);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["gen-synthetic", "--vehicles", "6", "--images-per-vehicle", "4"]);
    run(&["gen-prototypes", "--manifest", &p("manifest.jsonl"), "--layer", "pool5"]);
    run(&["label-protos", "--bank", &p("bank_pool5.json"), "--assign", "sticker=0", "--assign", "light=1"]);
    let bank = draovg::prototype::PrototypeBank::load(&dir.path().join("bank_pool5_labeled.json")).unwrap();
    assert_eq!(bank.prototypes[0].semantic, draovg::prototype::Semantic::Sticker);
    assert_eq!(bank.prototypes[0].threshold, 0.05);
    assert_eq!(bank.prototypes[1].semantic, draovg::prototype::Semantic::Light);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("label-protos.config.json")).unwrap()).unwrap();
    assert_eq!(echo["effective"]["sticker"], 0);

    // a duplicate label is a data error
    let mut dup = vec!["--out", out, "label-protos", "--bank"];
    let bank_path = p("bank_pool5.json");
    dup.push(&bank_path);
    dup.extend(["--assign", "sticker=0", "--assign", "sticker=1"]);
    assert_eq!(draovg(&dup).status.code(), Some(2));
}
