mod common;

use std::process::Command;

use common::{core_fixture, model_files};
use liesensor::verifier::{EvalReport, VerificationResult};
use liesensor_service::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn run_args(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["liesensor"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn model_args() -> Vec<String> {
    let f = model_files();
    vec![
        "--bundle".into(),
        f.bundle.display().to_string(),
        "--weights".into(),
        f.weights.display().to_string(),
    ]
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run_args(&[]).0, EXIT_USAGE);
    assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run_args(&["train-text", "--out", "x"]).0, EXIT_USAGE);
    assert_eq!(run_args(&["--help"]).0, EXIT_OK);
}

#[test]
fn train_text_writes_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.lsb");
    let (code, stdout, stderr) = run_args(&[
        "train-text",
        "--synthetic",
        "400",
        "--out",
        out.to_str().unwrap(),
        "--feature",
        "tfidf",
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("\"chosen\""), "{stdout}");
    let bundle = liesensor::textclf::TextClassifier::load(&out).unwrap();
    assert!(bundle.idf.is_some());

    let (code, _, stderr) = run_args(&[
        "train-text",
        "/no/such/tweets.csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_DATA, "{stderr}");
}

#[test]
fn train_face_writes_weights_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.lswt");
    let hist = dir.path().join("h.csv");
    let (code, stdout, stderr) = run_args(&[
        "train-face",
        "--synthetic",
        "40",
        "--epochs",
        "2",
        "--width",
        "0.25",
        "--out",
        out.to_str().unwrap(),
        "--history",
        hist.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(
        stdout.starts_with("epoch,loss,val_accuracy\n1,"),
        "{stdout}"
    );
    liesensor::cnn::load_weights(&out).unwrap();
    let history = std::fs::read_to_string(&hist).unwrap();
    assert_eq!(history.lines().count(), 3);
}

#[test]
fn verify_prints_a_record() {
    let image = core_fixture("astronaut_face.pgm");
    let mut args = vec![
        "verify",
        "--text",
        "so sad and lonely, i miss you",
        "--image",
        image.to_str().unwrap(),
    ];
    let models = model_args();
    args.extend(models.iter().map(String::as_str));
    let (code, stdout, stderr) = run_args(&args);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let r = VerificationResult::from_record(stdout.trim()).unwrap();
    assert_eq!(r.verdict, Some(liesensor::verifier::Verdict::Liar));

    args.push("--json");
    let (_, stdout, _) = run_args(&args);
    let r: VerificationResult = serde_json::from_str(&stdout).unwrap();
    assert_eq!(r.verdict, Some(liesensor::verifier::Verdict::Liar));

    let mut missing = vec!["verify", "--text", "hi", "--image", "/no/such.pgm"];
    missing.extend(models.iter().map(String::as_str));
    assert_eq!(run_args(&missing).0, EXIT_DATA);
}

#[test]
fn evaluate_reports_precision_and_recall() {
    let fixtures = core_fixture("protocol.csv");
    let mut args = vec!["evaluate", "--fixtures", fixtures.to_str().unwrap()];
    let models = model_args();
    args.extend(models.iter().map(String::as_str));
    let (code, stdout, stderr) = run_args(&args);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let json_start = stdout.find('{').unwrap();
    let report: EvalReport = serde_json::from_str(&stdout[json_start..]).unwrap();
    assert_eq!(
        report.tp + report.fp + report.fn_ + report.tn + report.excluded,
        12
    );
    assert_eq!(stdout[..json_start].lines().count(), 12);
}

#[test]
fn serve_refuses_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("svc.conf");
    std::fs::write(
        &cfg,
        "bundle = missing.lsb\nweights = missing.lswt\nbind = 127.0.0.1:0\n",
    )
    .unwrap();
    let (code, _, stderr) = run_args(&["serve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA, "{stderr}");
    assert!(stderr.contains("missing.lsb"), "{stderr}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_liesensor");
    assert_eq!(
        Command::new(bin).output().unwrap().status.code(),
        Some(EXIT_USAGE)
    );
    let out = Command::new(bin)
        .args([
            "verify",
            "--text",
            "x",
            "--image",
            "/no/such.pgm",
            "--bundle",
            "/no/b",
            "--weights",
            "/no/w",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DATA));
}
