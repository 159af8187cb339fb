//! End-to-end runs of the `qmd` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "qmd {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn first_line(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

fn shapes_classes(split: &Path) -> usize {
    let ann: serde_json::Value = serde_json::from_slice(&std::fs::read(split.join("annotations.json")).unwrap()).unwrap();
    ann["classes"].as_array().expect("class list").len()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.jsonl");
    let missing = missing.to_str().unwrap();

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["synth", "--bogus"]), 1);
    assert_eq!(code(&["encode", "--queries", missing, "--num-classes", "3"]), 1);
    assert_eq!(code(&["eval", "--detections", missing, "--dataset", missing]), 1);

    let shapes = tmp.path().join("shapes");
    let s = shapes.to_str().unwrap();
    ok(&["gen-shapes", "--train", "4", "--val", "2", "--test", "3", "--out", s]);
    let test = shapes.join("test");
    let test = test.to_str().unwrap();
    assert_eq!(code(&["synth", "--dataset", test, "--type", "kld", "--kld-p", "0"]), 1);
    assert_eq!(code(&["synth", "--dataset", test, "--type", "kld", "--kld-p", "1.5"]), 1);
    assert_eq!(code(&["gen-shapes", "--min-size", "0.5", "--max-size", "0.2", "--out", s]), 1);
    assert_eq!(code(&["train", "--data", s, "--mix", "1,0", "--steps", "2", "--out", s]), 1);
    assert_eq!(code(&["train", "--data", s, "--mix", "0,0,0", "--steps", "2", "--out", s]), 1);

    // a regular file where a directory is needed: an I/O failure, not bad input
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let under = blocker.join("out.jsonl");
    assert_eq!(code(&["synth", "--dataset", test, "--type", "sld", "--out", under.to_str().unwrap()]), 2);
}

#[test]
fn location_bits_match_worked_examples() {
    let bits = |y: &str, x: &str| ok(&["encode", "--location-only", "--y", y, "--x", x]).trim().to_string();
    assert_eq!(bits("top", "right"), "[1,0,0,0,0,0,1,0]");
    assert_eq!(bits("all", "far-right"), "[1,1,1,0,0,0,0,1]");
    assert_eq!(bits("all", "all"), "[1,1,1,1,1,1,1,1]");

    let line = ok(&["encode", "--labels", "1,3", "--num-classes", "5", "--y", "bottom", "--x", "far-left"]);
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(rec["bits"], serde_json::json!([0, 1, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0]));
}

#[test]
fn pipeline_from_shapes_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();

    ok(&["gen-shapes", "--seed", "3", "--train", "48", "--val", "8", "--test", "16", "--out", &p("shapes")]);
    let test = p("shapes/test");
    for dir in ["train", "val", "test"] {
        assert!(tmp.path().join("shapes").join(dir).join("annotations.json").is_file());
    }

    ok(&["synth", "--dataset", &test, "--type", "lld", "--n", "20", "--out", &p("lld.jsonl")]);
    ok(&["synth", "--dataset", &test, "--type", "sld", "--out", &p("sld.jsonl")]);
    let header = first_line(&tmp.path().join("lld.jsonl"));
    assert_eq!(header["provenance"]["seed"], 0);
    assert!(header["provenance"]["command"].as_str().unwrap().contains("synth"));
    let lld = std::fs::read_to_string(tmp.path().join("lld.jsonl")).unwrap();
    assert_eq!(lld.lines().count(), 21);

    ok(&["encode", "--queries", &p("lld.jsonl"), "--dataset", &test, "--out", &p("enc.jsonl")]);
    let classes = shapes_classes(&tmp.path().join("shapes/test"));
    let enc = std::fs::read_to_string(tmp.path().join("enc.jsonl")).unwrap();
    for line in enc.lines().skip(1) {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(rec["bits"].as_array().unwrap().len(), classes + 8);
    }

    ok(&[
        "train", "--data", &p("shapes"), "--mix", "0.5,0,0.5", "--steps", "30", "--batch-size", "4",
        "--eval-interval", "15", "--seed", "2", "--out", &p("run"),
    ]);
    for file in ["checkpoint.bin", "last.bin", "history.jsonl", "run.json"] {
        assert!(tmp.path().join("run").join(file).is_file(), "{file}");
    }
    let history = std::fs::read_to_string(tmp.path().join("run/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 31);
    assert_eq!(first_line(&tmp.path().join("run/history.jsonl"))["provenance"]["seed"], 2);

    let ckpt = p("run/checkpoint.bin");
    ok(&["predict", "--checkpoint", &ckpt, "--data", &test, "--out", &p("det.jsonl")]);
    ok(&["predict", "--checkpoint", &ckpt, "--data", &test, "--queries", &p("lld.jsonl"), "--out", &p("qlld.jsonl")]);
    ok(&["predict", "--checkpoint", &ckpt, "--data", &test, "--queries", &p("sld.jsonl"), "--out", &p("qsld.jsonl")]);
    let det = std::fs::read_to_string(tmp.path().join("det.jsonl")).unwrap();
    assert_eq!(det.lines().count(), 17);

    ok(&[
        "eval", "--detections", &p("det.jsonl"), &p("qlld.jsonl"), &p("qsld.jsonl"), "--queries", &p("lld.jsonl"),
        "--dataset", &test, "--out", &p("eval.json"),
    ]);
    // the SLD queries were not passed, so their detections are ignored
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("eval.json")).unwrap()).unwrap();
    assert!(report["provenance"]["command"].as_str().unwrap().starts_with("qmd eval"));
    assert!(report["lld_ap"].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v)));
    assert!(report["det_map"].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v)));
    assert!(report["sld_ap"].is_null());
    assert_eq!(report["per_class"].as_array().unwrap().len(), classes);

    let csv = ok(&["report", "--input", &p("eval.json"), "--format", "csv"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("Model,SLD AP,KLD AP,LLD AP,DET mAP,SLD AR@1"));
    assert!(lines.next().unwrap().starts_with("QMD,"));
    let text = ok(&["report", "--input", &p("eval.json"), "--name", "mine"]);
    assert!(text.contains("mine"));
}

#[test]
fn quick_benchmark_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let text = ok(&["benchmark", "--quick", "--steps", "20", "--out", out.to_str().unwrap()]);
    assert!(text.contains("Detector + post-processing"));
    for tag in ["5a", "5b", "5c", "6a", "6b", "6c"] {
        assert!(
            text.lines().any(|l| (l.starts_with("[PASS]") || l.starts_with("[FAIL]")) && l.contains(tag)),
            "{tag}"
        );
    }

    let csv = std::fs::read_to_string(out.join("benchmark.csv")).unwrap();
    assert!(csv.starts_with("Model,"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("benchmark.json")).unwrap()).unwrap();
    assert!(json["results"].as_array().is_some_and(|r| !r.is_empty()));
    assert!(json["median"].is_array() || json["median"].is_object());

    let table = ok(&["report", "--input", out.join("benchmark.json").to_str().unwrap(), "--format", "csv"]);
    assert_eq!(table, csv);
}
