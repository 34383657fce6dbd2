use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use collab_core::batch::{eval_test_point, BatchModelTranscript};
use collab_core::SequenceDataset;
use serde_json::Value;

fn collab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn missing_dataset_is_a_validation_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"seed": 1, "output_dir": "out", "experiment": {"mode": "batch",
            "data": {"path": "nowhere.json"}, "m": 4}}"#,
    )
    .unwrap();
    let o = collab(&["run", "cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("experiment.data"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_fields_and_bad_parameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("extra.json"),
        r#"{"seed": 1, "output_dir": "out", "experiment": {"mode": "verify", "trails": 3}}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("eps.json"),
        r#"{"seed": 1, "output_dir": "out", "experiment": {"mode": "online",
            "data": {"generator": {"kind": "xor", "n": 10}}, "K": 4, "eps": 0,
            "alice": {"kind": "vaw", "d": 1}, "bob": {"kind": "vaw", "d": 1}}}"#,
    )
    .unwrap();
    let o = collab(&["run", "extra.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trails"), "{}", stderr(&o));
    let o = collab(&["run", "eps.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment.eps"), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = collab(&["verify", "--out", "v", "--trials", "20"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&dir.path().join("v/report.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    let csv = fs::read_to_string(dir.path().join("v/metrics.csv")).unwrap();
    assert!(csv.starts_with("check,passed,detail"));
}

#[test]
fn generated_data_reruns_and_report_recomputes_the_regret() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gen.json"),
        r#"{"kind": "additive-linear-noise", "n": 1500, "d_a": 2, "d_b": 2, "signal": 0.4, "noise": 0.1}"#,
    )
    .unwrap();
    let o = collab(&["gen-data", "--spec", "gen.json", "--seed", "4", "--out", "data.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ds: SequenceDataset = serde_json::from_str(&fs::read_to_string(dir.path().join("data.json")).unwrap()).unwrap();
    assert_eq!(ds.len(), 1500);

    fs::create_dir(dir.path().join("cfgs")).unwrap();
    fs::write(
        dir.path().join("cfgs/online.json"),
        r#"{"seed": 4, "output_dir": "../run", "experiment": {"mode": "online",
            "data": {"path": "../data.json"}, "K": 4, "eps": 0.2, "solo": false,
            "alice": {"kind": "conversation", "d": 2, "m": 10, "g": 0.2},
            "bob": {"kind": "conversation", "d": 2, "m": 10, "g": 0.2}}}"#,
    )
    .unwrap();
    let o = collab(&["run", "cfgs/online.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("round,sqe,ece,disagreement@0.2"));
    assert_eq!(metrics.lines().count(), 5);

    let o = collab(
        &[
            "report", "--transcript", "run/transcript.txt", "--data", "data.json", "--g", "0.2", "--m", "10",
            "--eps", "0.2", "--out", "again.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let first = read_json(&dir.path().join("run/report.json"));
    let again = read_json(&dir.path().join("again.json"));
    assert_eq!(first["regret"], again);
}

#[test]
fn batch_transcripts_replay_outside_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"seed": 6, "output_dir": "out", "experiment": {"mode": "batch",
            "data": {"generator": {"kind": "additive-linear-noise", "n": 400, "d_a": 2, "d_b": 2, "signal": 0.3, "noise": 0.05}},
            "test": {"generator": {"kind": "additive-linear-noise", "n": 300, "d_a": 2, "d_b": 2, "signal": 0.3, "noise": 0.05}},
            "m": 6}}"#,
    )
    .unwrap();
    let o = collab(&["run", "cfg.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let both = read_json(&dir.path().join("out/transcripts.json"));
    let alice: BatchModelTranscript = serde_json::from_value(both["alice"].clone()).unwrap();
    let bob: BatchModelTranscript = serde_json::from_value(both["bob"].clone()).unwrap();
    let spec: collab_core::datagen::GeneratorSpec = serde_json::from_str(
        r#"{"kind": "additive-linear-noise", "n": 300, "d_a": 2, "d_b": 2, "signal": 0.3, "noise": 0.05}"#,
    )
    .unwrap();
    let test = spec.generate_holdout(6, 400).unwrap();
    let mse = test
        .examples()
        .iter()
        .map(|e| (eval_test_point(&e.x_a, &e.x_b, &alice, &bob).unwrap() - e.y).powi(2))
        .sum::<f64>()
        / 300.0;
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["test_mse"].as_f64().unwrap().to_bits(), mse.to_bits());
}

#[test]
fn several_configs_run_together_and_failures_keep_the_worst_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("good.json"),
        r#"{"seed": 1, "output_dir": "good", "experiment": {"mode": "bayes",
            "prior": {"inline": {"atoms": [{"a": "0", "b": "0", "y": 0, "p": 0.5}, {"a": "1", "b": "1", "y": 1, "p": 0.5}]}},
            "K": 3, "m": 4}}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"seed": 1, "output_dir": "bad", "experiment": {"mode": "bayes",
            "prior": {"path": "missing.json"}, "K": 3, "m": 4}}"#,
    )
    .unwrap();
    let o = collab(&["run", "good.json", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("experiment.prior.path"), "{}", stderr(&o));
    assert!(dir.path().join("good/report.json").exists());
    let report = read_json(&dir.path().join("good/report.json"));
    assert_eq!(report["expected_error"][0], Value::from(0.0));
}
