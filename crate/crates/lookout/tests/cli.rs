use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lookout");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus + config shared by the tests of one temp dir.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let config = dir.join("run.json");
    fs::write(
        &config,
        r#"{
  "profile": "micro",
  "data": { "synth": { "count": 12 }, "test_fraction": 0.25 },
  "train": { "glimpses": 2, "batch_size": 4, "epochs": 1, "learning_rate": 0.001, "checkpoint_every": 2 },
  "eval": { "glimpses": 3, "seeds": 2, "batch_size": 3 }
}"#,
    )
    .unwrap();
    let corpus = dir.join("corpus");
    ok(&["synth", "--config", s(&config), "--seed", "4", "--out", s(&corpus)]);
    (config, corpus.join("manifest.jsonl"))
}

#[test]
fn synth_train_eval_explore_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (config, manifest) = setup(dir);
    let lines = fs::read_to_string(&manifest).unwrap();
    assert_eq!(lines.lines().count(), 12);
    assert_eq!(lines.matches("\"test\"").count(), 3);

    let train = dir.join("train");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&train),
    ]);
    let metrics = fs::read_to_string(train.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], lookout::trainer::METRICS_HEADER);
    assert_eq!(rows.len(), 1 + 3); // 9 training images in batches of 4
    assert!(train.join("checkpoints/iter_000002.ckpt").is_file());
    assert!(train.join("checkpoints/final.ckpt").is_file());
    assert!(train.join("config.json").is_file());
    assert!(!train.join(".lock").exists());

    // Resuming continues the iteration numbering.
    ok(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&train),
        "--resume",
        s(&train.join("checkpoints/final.ckpt")),
    ]);
    let metrics = fs::read_to_string(train.join("metrics.csv")).unwrap();
    let iterations: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["1", "2", "3", "4", "5", "6"]);

    // Initializing from a checkpoint starts a new count.
    let transfer = dir.join("transfer");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&transfer),
        "--init",
        s(&train.join("checkpoints/final.ckpt")),
    ]);
    let metrics = fs::read_to_string(transfer.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().nth(1).unwrap().split(',').next(), Some("1"));

    let eval = dir.join("eval");
    let ckpt = train.join("checkpoints/final.ckpt");
    let out = ok(&[
        "eval",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--policy",
        "learned",
        "--policy",
        "random",
        "--out",
        s(&eval),
    ]);
    let curves = fs::read_to_string(eval.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 2);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Learned attention"));
    assert!(table.contains("with Random Selection"));
    let measured = table.split("-- reference --").next().unwrap();
    assert!(!measured.contains("Neighbourhood Selection"));

    let report = ok(&["report", "--out", s(&eval)]);
    assert!(String::from_utf8(report.stdout)
        .unwrap()
        .contains("with Random Selection"));

    let explore = dir.join("explore");
    let image = manifest
        .parent()
        .unwrap()
        .join("images")
        .read_dir()
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    ok(&[
        "explore",
        "--config",
        s(&config),
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--glimpses",
        "5",
        "--out",
        s(&explore),
    ]);
    for t in 1..=5 {
        for kind in ["recon", "heatmap", "overlay"] {
            assert!(explore.join(format!("step_{t:02}_{kind}.png")).is_file());
        }
    }
    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(explore.join("trace.json")).unwrap()).unwrap();
    let steps = trace["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 5);
    for st in steps {
        let sum: f64 = st["attention"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    let first = fs::read(explore.join("trace.json")).unwrap();
    fs::remove_dir_all(&explore).unwrap();
    ok(&[
        "explore",
        "--config",
        s(&config),
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--glimpses",
        "5",
        "--out",
        s(&explore),
    ]);
    assert_eq!(fs::read(explore.join("trace.json")).unwrap(), first);
}

#[test]
fn baselines_need_no_checkpoint_but_learned_does() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (config, manifest) = setup(dir);
    let out = dir.join("gt");
    ok(&[
        "eval",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--policy",
        "gt-oracle",
        "--out",
        s(&out),
    ]);
    assert!(out.join("curves.csv").is_file());

    let missing = dir.join("learned");
    let r = run(&[
        "eval",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--policy",
        "learned",
        "--out",
        s(&missing),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!missing.exists());
}

#[test]
fn configuration_errors_exit_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = dir.join("bad.json");
    fs::write(&bad, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let out = dir.join("out");
    let r = run(&["train", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("learning_rat"));
    assert!(!out.exists());

    let r = run(&["train", "--profile", "huge", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = run(&["eval", "--policy", "greedy", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = run(&["train", "--manifest", s(&dir.join("nope.jsonl")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corpus");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "1").unwrap();
    let r = run(&["synth", "--count", "2", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.join("manifest.jsonl").exists());
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (config, manifest) = setup(dir);
    let outputs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
        .map(|k| {
            let train = dir.join(format!("train{k}"));
            let eval = dir.join(format!("eval{k}"));
            ok(&[
                "train",
                "--config",
                s(&config),
                "--manifest",
                s(&manifest),
                "--out",
                s(&train),
            ]);
            ok(&[
                "eval",
                "--config",
                s(&config),
                "--manifest",
                s(&manifest),
                "--checkpoint",
                s(&train.join("checkpoints/final.ckpt")),
                "--out",
                s(&eval),
            ]);
            (
                fs::read(train.join("metrics.csv")).unwrap(),
                fs::read(eval.join("curves.csv")).unwrap(),
            )
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}
