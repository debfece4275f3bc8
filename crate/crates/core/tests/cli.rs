use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use repdisc::fmat::{write_fmat, write_labels};
use repdisc::{ClassLabels, FeatureMatrix, Labels, TaskVector};
use serde_json::Value;

fn repdisc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repdisc"))
        .args(args)
        .env("REPDISC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn info_on_one_by_one_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("one.fmat");
    write_fmat(&FeatureMatrix::from_rows(&[&[3.5]]).unwrap(), &f).unwrap();
    assert_eq!(fs::metadata(&f).unwrap().len(), 22);
    let out = repdisc(&["info", "--file", s(&f)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "p=1 n=1 centered=false");
}

#[test]
fn info_on_labels_and_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let l = dir.path().join("y.lbl");
    write_labels(&Labels::Classes(ClassLabels::new(vec![0, 2, 1, 1], 3).unwrap()), &l).unwrap();
    let out = repdisc(&["info", "--file", s(&l)]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "kind=classes n=4 num_classes=3");

    let bad = dir.path().join("bad.fmat");
    fs::write(&bad, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00").unwrap();
    let out = repdisc(&["info", "--file", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BadMagic"));

    let out = repdisc(&["info", "--file", s(&dir.path().join("missing.fmat"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("IoError"));
}

#[test]
fn argument_errors_exit_two() {
    assert_eq!(repdisc(&["compare", "--za", "a"]).status.code(), Some(2));
    assert_eq!(repdisc(&["verify", "--theorem", "thm9"]).status.code(), Some(2));
    assert_eq!(repdisc(&["info", "--file", "x", "--frob"]).status.code(), Some(2));
}

fn write_hand_pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let a = dir.join("a.fmat");
    let b = dir.join("b.fmat");
    let y = dir.join("y.lbl");
    write_fmat(&FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0]]).unwrap(), &a).unwrap();
    write_fmat(&FeatureMatrix::from_rows(&[&[0.0, 1.0, -1.0]]).unwrap(), &b).unwrap();
    write_labels(&Labels::Regression(TaskVector::from_slice(&[1.0, 0.0, -1.0]).unwrap()), &y).unwrap();
    (a, b, y)
}

#[test]
fn compare_hand_pair_keeps_metric_order() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, y) = write_hand_pair(dir.path());
    let out = dir.path().join("r.json");
    let o = repdisc(&[
        "compare", "--za", s(&a), "--zb", s(&b), "--labels", s(&y), "--metrics", "cka,td,cca", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let r = json(&out);
    let m = r["metrics"].as_array().unwrap();
    let names: Vec<_> = m.iter().map(|v| v["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["cka", "td", "cca"]);
    assert!((m[0]["value"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert!((m[1]["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((m[2]["value"].as_f64().unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn compare_td_cls_on_identical_inputs_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fmat");
    let y = dir.path().join("y.lbl");
    let rows: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let rows2: Vec<f64> = (0..40).map(|i| (i as f64 * 0.91).cos()).collect();
    write_fmat(&FeatureMatrix::from_rows(&[&rows, &rows2]).unwrap(), &a).unwrap();
    let labels: Vec<u32> = rows.iter().map(|&v| u32::from(v > 0.0)).collect();
    write_labels(&Labels::Classes(ClassLabels::new(labels, 2).unwrap()), &y).unwrap();
    let out = dir.path().join("r.json");
    let o = repdisc(&[
        "compare", "--za", s(&a), "--zb", s(&a), "--labels", s(&y), "--metrics", "td_cls,td_soft", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["metrics"][0]["value"].as_f64(), Some(0.0));
    assert_eq!(r["metrics"][1]["value"].as_f64(), Some(0.0));
}

#[test]
fn compare_requires_labels_for_td() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, _) = write_hand_pair(dir.path());
    let o = repdisc(&["compare", "--za", s(&a), "--zb", s(&b), "--metrics", "td"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("InvalidArgument"));
}

#[test]
fn compare_with_eval_split_and_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, y) = write_hand_pair(dir.path());
    let csv = dir.path().join("b.csv");
    fs::write(&csv, "0\n1\n-1\n").unwrap();
    let out = dir.path().join("r.json");
    let o = repdisc(&[
        "compare", "--za", s(&a), "--zb", s(&csv), "--labels", s(&y),
        "--eval-za", s(&a), "--eval-zb", s(&b), "--eval-labels", s(&y),
        "--metrics", "td", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["eval_n"].as_u64(), Some(3));
    assert!((r["metrics"][0]["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn synth_spectrum_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("pair");
    let run = || {
        let o = repdisc(&["synth", "--kind", "correlated", "--p", "3", "--pp", "3", "--n", "500", "--seed", "7", "--out-prefix", s(&prefix)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            fs::read(dir.path().join("pair_a.fmat")).unwrap(),
            fs::read(dir.path().join("pair_b.fmat")).unwrap(),
            fs::read(dir.path().join("pair_spec.json")).unwrap(),
        )
    };
    let first = run();
    assert_eq!(first, run());
    let manifest = json(&dir.path().join("pair_spec.json"));
    assert_eq!(manifest["kind"], "correlated");
    assert_eq!(manifest["pp"], 3);
    for sigma in manifest["sigma"].as_array().unwrap() {
        assert!((sigma.as_f64().unwrap() - 1.0).abs() < 1e-8);
    }

    let csv = dir.path().join("sigma.csv");
    let report = dir.path().join("spec.json");
    let a = dir.path().join("pair_a.fmat");
    let b = dir.path().join("pair_b.fmat");
    let o = repdisc(&["spectrum", "--za", s(&a), "--zb", s(&b), "--out", s(&csv), "--restricted", "2", "--report", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<f64> = fs::read_to_string(&csv).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|&v| v > 0.99));
    let r = json(&report);
    assert_eq!(r["restricted"]["r"], 2);
    assert!(r["repset_limit"].as_f64().unwrap() < 1e-6);

    let out1 = dir.path().join("c1.json");
    let out2 = dir.path().join("c2.json");
    for out in [&out1, &out2] {
        let o = repdisc(&["compare", "--za", s(&a), "--zb", s(&b), "--metrics", "cca,cka,maxmatch", "--out", s(out)]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn probe_logistic_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let z = dir.path().join("z.fmat");
    let y = dir.path().join("y.lbl");
    let xs: Vec<f64> = (0..20).map(|i| i as f64 - 9.5).collect();
    write_fmat(&FeatureMatrix::from_rows(&[&xs]).unwrap(), &z).unwrap();
    let labels: Vec<u32> = xs.iter().map(|&v| u32::from(v > 0.0)).collect();
    write_labels(&Labels::Classes(ClassLabels::new(labels, 2).unwrap()), &y).unwrap();
    let out = dir.path().join("probe.json");
    let o = repdisc(&[
        "probe", "--train-z", s(&z), "--train-labels", s(&y), "--test-z", s(&z), "--test-labels", s(&y),
        "--head", "logistic", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["kind"], "logistic");
    assert_eq!(r["test_accuracy"].as_f64(), Some(1.0));
    assert_eq!(r["head"]["w"].as_array().unwrap().len(), 2);

    let o = repdisc(&["probe", "--train-z", s(&z), "--train-labels", s(&y), "--head", "linear"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_ball_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let o = repdisc(&["verify", "--theorem", "ball", "--dim", "8", "--samples", "1000000", "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    let keys: Vec<_> = r.as_object().unwrap().keys().cloned().collect();
    let mut expected = [
        "theorem", "theoretical", "empirical_mean", "empirical_stderr", "trials", "n", "seed", "pass", "tolerance_rule",
    ];
    expected.sort();
    let mut keys = keys;
    keys.sort();
    assert_eq!(keys, expected);
    assert_eq!(r["pass"], true);
    assert_eq!(r["theoretical"].as_f64(), Some(0.1));
}

#[test]
fn verify_failure_exits_one() {
    // a relative tolerance of zero cannot survive floating-point rotations
    let o = repdisc(&[
        "verify", "--theorem", "invariance", "--p", "2", "--pp", "3", "--n", "64", "--trials", "5", "--rel-tol", "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["pass"], false);
}

#[test]
fn verify_thm3_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, _) = write_hand_pair(dir.path());
    let o = repdisc(&["verify", "--theorem", "thm3", "--za", s(&a), "--zb", s(&b), "--num-tasks", "50000", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["theoretical"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}
