use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_latent-tree"));
    cmd.env("LT_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let text = std::fs::read_to_string(&path).expect("schema file");
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).expect("valid schema")
}

fn assert_valid(validator: &jsonschema::Validator, value: &Value) {
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}\n{value:#}");
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

/// Last stderr line parsed as the error report.
fn error_json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has output");
    let value: Value = serde_json::from_str(line).expect("error json");
    assert_valid(&schema("error.schema.json"), &value);
    value
}

#[test]
fn train_writes_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = run(&[
        "train",
        "--data",
        "builtin:synthetic-regression",
        "--task",
        "reg",
        "--depth",
        "2",
        "--max-epochs",
        "3",
        "--batch-size",
        "64",
        "--out-dir",
        out_dir,
    ]);
    let summary = stdout_json(&out);
    assert_valid(&schema("summary.schema.json"), &summary);
    assert!(summary["test_mse"].is_number());
    assert_eq!(summary["epochs_run"], 3);

    let on_disk: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);

    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let record_schema = schema("metrics-record.schema.json");
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in lines {
        assert_valid(&record_schema, &serde_json::from_str(line).unwrap());
    }

    let checkpoint: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(checkpoint["format_version"], 1);
    assert_eq!(checkpoint["depth"], 2);
    assert_eq!(checkpoint["a_frozen"]["data"].as_array().unwrap().len(), 7);
}

#[test]
fn train_cluster_task_reports_purity() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        "builtin:glass",
        "--task",
        "cluster",
        "--target-cols",
        "RI,1",
        "--max-epochs",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let summary = stdout_json(&out);
    assert_valid(&schema("summary.schema.json"), &summary);
    let dp = summary["dendrogram_purity"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&dp));
}

#[test]
fn train_from_csv_with_config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut text = String::from("x1,color,label\n");
    for i in 0..60 {
        let x = i as f64 / 10.0 - 3.0;
        let color = ["red", "green"][i % 2];
        text.push_str(&format!("{x},{color},{}\n", u8::from(x > 0.0)));
    }
    std::fs::write(&csv, text).unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"depth": 3, "max_epochs": 50, "batch_size": 16}"#).unwrap();
    let out = run(&[
        "train",
        "--data",
        csv.to_str().unwrap(),
        "--task",
        "cls",
        "--target",
        "label",
        "--categorical",
        "color",
        "--config",
        config.to_str().unwrap(),
        "--max-epochs",
        "2",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["epochs_run"], 2);
    assert!(summary["stratified"].as_bool().unwrap());
    let checkpoint: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/checkpoint.json")).unwrap()).unwrap();
    assert_eq!(checkpoint["depth"], 3);
}

#[test]
fn invalid_lambda_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        "builtin:synthetic-regression",
        "--task",
        "reg",
        "--lambda",
        "-1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(error_json(&out)["error"]["code"], "config.lambda");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"lamda": 1}"#).unwrap();
    let out = run(&[
        "train",
        "--data",
        "builtin:synthetic-regression",
        "--task",
        "reg",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(error_json(&out)["error"]["code"], "json");
}

#[test]
fn malformed_csv_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "a,b,y\n1,2,0\n3,oops,1\n").unwrap();
    let out = run(&[
        "train",
        "--data",
        csv.to_str().unwrap(),
        "--task",
        "cls",
        "--target",
        "y",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let err = error_json(&out);
    assert_eq!(err["error"]["code"], "ingestion");
    let message = err["error"]["message"].as_str().unwrap();
    assert!(message.contains("row 2") && message.contains("\"b\""), "{message}");
}

#[test]
fn solve_prints_dump_and_oracle_gap() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    std::fs::write(&q, "0.3,-0.2,1.2\n-1,0.4,0.1\n").unwrap();
    let out = run(&[
        "solve",
        "--q",
        q.to_str().unwrap(),
        "--lambda",
        "1",
        "--depth",
        "1",
        "--oracle",
    ]);
    let dump = stdout_json(&out);
    assert_valid(&schema("solution-dump.schema.json"), &dump);
    assert!(dump["oracle_max_gap"].as_f64().unwrap() < 1e-6);
    assert_eq!(dump["a"].as_array().unwrap().len(), 3);
}

#[test]
fn solve_rejects_wrong_width() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    std::fs::write(&q, "0.3,-0.2\n").unwrap();
    let out = run(&["solve", "--q", q.to_str().unwrap(), "--lambda", "1", "--depth", "1"]);
    assert_eq!(error_json(&out)["error"]["code"], "argument");
}

#[test]
fn bench_csv_leaves_oracle_cells_blank_above_cap() {
    let out = run(&[
        "bench",
        "--depths",
        "1,6",
        "--ns",
        "20",
        "--reps",
        "1",
        "--oracle-cap",
        "100",
    ]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["n", "depth", "solver_ms_median", "oracle_ms_median", "speedup"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(!rows[0][3].is_empty());
    assert!(rows[1][3].is_empty() && rows[1][4].is_empty());
}

#[test]
fn gapstudy_csv_has_one_row_per_lambda() {
    let out = run(&["gapstudy", "--lambdas", "0.5,50", "--instances", "20"]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][0], "50.0");
}

#[test]
fn gradcheck_reports_both_suites() {
    let out = run(&["gradcheck", "--trials", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("solver_jacobian: max_rel_err < 1e-4"), "{text}");
    assert!(text.contains("end_to_end: max_rel_err < 1e-3"), "{text}");
}

#[test]
fn gradcheck_with_zero_trials_warns() {
    let out = run(&["gradcheck", "--trials", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero trials"));
}

#[test]
fn solve_single_point_pools_root_and_left_child() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    std::fs::write(&q, "-0.5,0.5,-10\n").unwrap();
    let out = run(&[
        "solve",
        "--q",
        q.to_str().unwrap(),
        "--lambda",
        "1",
        "--depth",
        "1",
        "--oracle",
    ]);
    let dump = stdout_json(&out);
    let a: Vec<f64> = dump["a"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, want) in a.iter().zip([1.0 / 3.0, 1.0 / 3.0, 0.0]) {
        assert!((got - want).abs() < 1e-6, "{a:?}");
    }
    assert!(dump["oracle_max_gap"].as_f64().unwrap() < 1e-6);
}

#[test]
fn solve_rejects_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    std::fs::write(&q, "").unwrap();
    let out = run(&["solve", "--q", q.to_str().unwrap(), "--lambda", "1", "--depth", "1"]);
    error_json(&out);
}

#[test]
fn seeded_training_is_reproducible() {
    let metrics = |dir: &Path| {
        let out = run(&[
            "train",
            "--data",
            "builtin:synthetic-classification",
            "--task",
            "cls",
            "--depth",
            "2",
            "--max-epochs",
            "3",
            "--seed",
            "7",
            "--out-dir",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        let text = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
        text.lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(metrics(a.path()), metrics(b.path()));
}
