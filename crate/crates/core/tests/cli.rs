use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use hclass::hierarchy::{Hierarchy, LabelSet};
use hclass::io::{render_fixed, report_value, write_dataset};
use hclass::losses::LossKind;
use hclass::trainer::{evaluate_model, generate_synthetic, train, Inference, TrainConfig};

const T5: &str = "r\t1\t2\n1\t3\t4\t5\n";

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        ws.write("t5.tsv", T5);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.path(name), text).unwrap();
    }
}

fn hclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hclass"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn validate_prints_levels_and_histogram() {
    let ws = Workspace::new();
    ws.write(
        "d.jsonl",
        "{\"labels\": [\"1\", \"3\"]}\n{\"labels\": [\"2\"]}\n{\"labels\": [\"1\", \"5\"]}\n",
    );
    let out = hclass(&[
        "validate",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--data",
        &ws.arg("d.jsonl"),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("nodes per level: [2, 3]\n"));
    assert!(text.contains("samples: 3\n"));
    assert!(text.contains("  1: 1\n  2: 2\n"));
}

#[test]
fn validate_rejects_multi_path_line() {
    let ws = Workspace::new();
    ws.write(
        "d.jsonl",
        "{\"labels\": [\"1\", \"3\"]}\n{\"labels\": [\"1\", \"3\", \"5\"]}\n",
    );
    let out = hclass(&[
        "validate",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--data",
        &ws.arg("d.jsonl"),
        "--require-single-path",
    ]);
    let err = error_json(&out);
    assert_eq!(err["code"], "not_single_path");
    assert!(err["location"].as_str().unwrap().ends_with("d.jsonl:2"));
    assert!(out.stdout.is_empty());
}

#[test]
fn incoherent_labels_fail_unless_augmented() {
    let ws = Workspace::new();
    ws.write("d.jsonl", "{\"labels\": [\"5\"]}\n");
    let base = [
        "validate",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--data",
        &ws.arg("d.jsonl"),
    ];
    let err = error_json(&hclass(&base));
    assert_eq!(err["code"], "incoherent_labels");
    let mut args = base.to_vec();
    args.push("--augment");
    assert!(hclass(&args).status.success());
}

#[test]
fn expected_on_worked_distribution() {
    let ws = Workspace::new();
    ws.write(
        "d.json",
        "{\"2\": 0.25, \"3\": 0.2, \"4\": 0.2, \"5\": 0.35}",
    );
    let base = [
        "expected",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--leafdist",
        &ws.arg("d.json"),
    ];
    let mut args = base.to_vec();
    args.extend(["--candidate", "1"]);
    let v = stdout_json(&hclass(&args));
    assert_eq!(v["expected_hf1"].as_f64(), Some(0.5));

    let mut args = base.to_vec();
    args.push("--search");
    let v = stdout_json(&hclass(&args));
    assert_eq!(v["candidate"], serde_json::json!(["1", "5"]));
    assert_eq!(v["expected_hf1"].as_f64(), Some(0.55));

    let mut args = base.to_vec();
    args.extend(["--candidate", "5"]);
    assert_eq!(error_json(&hclass(&args))["code"], "candidate");
}

#[test]
fn evaluate_exact_indicators() {
    let ws = Workspace::new();
    ws.write(
        "truth.jsonl",
        "{\"labels\": [\"1\", \"3\"]}\n{\"labels\": [\"2\"]}\n",
    );
    ws.write(
        "s.jsonl",
        "{\"scores\": [1, 0, 1, 0, 0]}\n{\"scores\": [0, 1, 0, 0, 0]}\n",
    );
    let args = [
        "evaluate",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--truth",
        &ws.arg("truth.jsonl"),
        "--scores",
        &ws.arg("s.jsonl"),
        "--tau",
        "0.5",
    ];
    let out = hclass(&args);
    let v = stdout_json(&out);
    assert_eq!(v["micro_f1"].as_f64(), Some(1.0));
    assert_eq!(v["hamming"].as_f64(), Some(0.0));
    assert_eq!(v["h_f1_auc"].as_f64(), Some(1.0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"micro_f1\": 1.000000,"));

    let mut summary = args.to_vec();
    summary.extend(["--report", "paper"]);
    let v = stdout_json(&hclass(&summary));
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        ["h_f1_auc", "hamming_permille", "macro_f1", "micro_f1"]
    );
}

#[test]
fn evaluate_reports_hamming_per_mille() {
    let ws = Workspace::new();
    ws.write("truth.jsonl", "{\"labels\": [\"1\", \"3\"]}\n");
    ws.write("s.jsonl", "{\"scores\": [0.9, 0, 0.2, 0, 0]}\n");
    let v = stdout_json(&hclass(&[
        "evaluate",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--truth",
        &ws.arg("truth.jsonl"),
        "--scores",
        &ws.arg("s.jsonl"),
        "--report",
        "paper",
    ]));
    // one missed label out of five cells
    assert_eq!(v["hamming_permille"].as_f64(), Some(200.0));
}

#[test]
fn mismatched_line_counts_are_reported() {
    let ws = Workspace::new();
    ws.write(
        "truth.jsonl",
        "{\"labels\": [\"2\"]}\n{\"labels\": [\"2\"]}\n",
    );
    ws.write("s.jsonl", "{\"scores\": [0, 1, 0, 0, 0]}\n");
    let err = error_json(&hclass(&[
        "curve",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--truth",
        &ws.arg("truth.jsonl"),
        "--scores",
        &ws.arg("s.jsonl"),
        "--out",
        &ws.arg("c.csv"),
    ]));
    assert_eq!(err["code"], "line_count_mismatch");
    assert!(err["message"].is_string());
}

#[test]
fn curve_writes_csv() {
    let ws = Workspace::new();
    ws.write("truth.jsonl", "{\"labels\": [\"1\", \"5\"]}\n");
    ws.write("s.jsonl", "{\"scores\": [0.75, 0.25, 0.2, 0.2, 0.35]}\n");
    let v = stdout_json(&hclass(&[
        "curve",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--truth",
        &ws.arg("truth.jsonl"),
        "--scores",
        &ws.arg("s.jsonl"),
        "--out",
        &ws.arg("c.csv"),
    ]));
    assert_eq!(v["auc"].as_f64(), Some(1.0));
    let csv = fs::read_to_string(ws.path("c.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "threshold,hP,hR");
    assert_eq!(lines.len(), 6);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = hclass(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["code"], "usage");
}

#[test]
fn cond_softmax_training_rejects_multi_path_rows() {
    let ws = Workspace::new();
    ws.write(
        "d.jsonl",
        "{\"labels\": [\"1\", \"3\"], \"features\": [1]}\n{\"labels\": [\"1\", \"3\", \"4\"], \"features\": [0]}\n",
    );
    let err = error_json(&hclass(&[
        "train",
        "--taxonomy",
        &ws.arg("t5.tsv"),
        "--data",
        &ws.arg("d.jsonl"),
        "--loss",
        "cond_softmax",
        "--out",
        &ws.arg("m.bin"),
    ]));
    assert_eq!(err["code"], "incompatible_loss");
    assert!(err["location"].as_str().unwrap().ends_with("d.jsonl:2"));
}

fn round_trip(kind: LossKind, rule: &[&str], inference: Inference) {
    let h = Hierarchy::balanced(&[2, 3]).unwrap();
    let ws = Workspace::new();
    ws.write("tax.tsv", &h.to_tsv());
    let syn = generate_synthetic(&h, 300, 6, 0.3, 1.0, 21);
    let (train_set, test_set) = syn.samples.split_at(200);
    ws.write("train.jsonl", &write_dataset(train_set, &h));
    ws.write("test.jsonl", &write_dataset(test_set, &h));

    let train_out = hclass(&[
        "train",
        "--taxonomy",
        &ws.arg("tax.tsv"),
        "--data",
        &ws.arg("train.jsonl"),
        "--loss",
        kind.as_str(),
        "--tau-adjust",
        "1.0",
        "--seed",
        "5",
        "--epochs",
        "30",
        "--out",
        &ws.arg("model.bin"),
    ]);
    stdout_json(&train_out);
    let infer_out = hclass(&[
        "infer",
        "--model",
        &ws.arg("model.bin"),
        "--data",
        &ws.arg("test.jsonl"),
        "--out",
        &ws.arg("scores.jsonl"),
    ]);
    assert!(
        infer_out.status.success(),
        "{}",
        String::from_utf8_lossy(&infer_out.stderr)
    );
    let mut args = vec![
        "evaluate".to_owned(),
        "--taxonomy".into(),
        ws.arg("tax.tsv"),
        "--truth".into(),
        ws.arg("test.jsonl"),
        "--scores".into(),
        ws.arg("scores.jsonl"),
    ];
    args.extend(rule.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let eval_out = hclass(&args);
    assert!(eval_out.status.success());

    let config = TrainConfig {
        loss_kind: kind,
        seed: 5,
        epochs: 30,
        tau_adjust: 1.0,
        ..TrainConfig::default()
    };
    let (model, _) = train(train_set, &h, &config).unwrap();
    let (mut report, _) = evaluate_model(&model, test_set, &h, kind, inference).unwrap();
    let (with_auc, _) = evaluate_model(&model, test_set, &h, kind, Inference::Auc).unwrap();
    report.h_f1_auc = with_auc.h_f1_auc;
    let expected = render_fixed(&report_value(&report, &h));
    assert_eq!(String::from_utf8(eval_out.stdout).unwrap(), expected);

    // the CLI and the library agree on every marginal, bit for bit
    let scores = fs::read_to_string(ws.path("scores.jsonl")).unwrap();
    let tables = hclass::io::parse_scores(&scores, &h).unwrap();
    let direct = hclass::trainer::predict_marginals(&model, test_set, &h, kind).unwrap();
    assert_eq!(tables, direct);
}

#[test]
fn train_infer_evaluate_matches_in_process_topdown() {
    round_trip(
        LossKind::CondSoftmaxLa,
        &["--rule", "topdown"],
        Inference::TopDown,
    );
}

#[test]
fn train_infer_evaluate_matches_in_process_threshold() {
    round_trip(LossKind::Bce, &["--tau", "0.5"], Inference::Threshold(0.5));
}

#[test]
fn outputs_are_byte_stable() {
    let h = Hierarchy::balanced(&[2, 2]).unwrap();
    let ws = Workspace::new();
    ws.write("tax.tsv", &h.to_tsv());
    let syn = generate_synthetic(&h, 50, 3, 0.3, 0.5, 2);
    ws.write("d.jsonl", &write_dataset(&syn.samples, &h));
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let model = ws.arg(&format!("{name}.bin"));
        let scores = ws.arg(&format!("{name}.jsonl"));
        let t = hclass(&[
            "train",
            "--taxonomy",
            &ws.arg("tax.tsv"),
            "--data",
            &ws.arg("d.jsonl"),
            "--loss",
            "cond_sigmoid",
            "--epochs",
            "5",
            "--out",
            &model,
        ]);
        assert!(t.status.success());
        assert!(hclass(&[
            "infer",
            "--model",
            &model,
            "--data",
            &ws.arg("d.jsonl"),
            "--out",
            &scores
        ])
        .status
        .success());
        outputs.push((
            t.stdout,
            fs::read(&model).unwrap(),
            fs::read(&scores).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn dataset_writer_round_trips() {
    let h = Hierarchy::balanced(&[2, 2]).unwrap();
    let syn = generate_synthetic(&h, 10, 2, 0.1, 0.0, 1);
    let text = write_dataset(&syn.samples, &h);
    let rows = hclass::io::parse_dataset(&text, &h, Default::default()).unwrap();
    let labels: Vec<LabelSet> = rows.iter().map(|r| r.labels.clone()).collect();
    let want: Vec<LabelSet> = syn.samples.iter().map(|s| s.labels.clone()).collect();
    assert_eq!(labels, want);
    for (r, s) in rows.iter().zip(&syn.samples) {
        assert_eq!(r.features.as_ref(), Some(&s.features));
    }
}
