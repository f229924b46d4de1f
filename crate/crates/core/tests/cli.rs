use std::path::Path;
use std::process::{Command, Output};
use treesmooth::dataset::load_bundled;
use treesmooth::forest::{fit_forest, ForestConfig};
use treesmooth::regularize::{apply, RegularizerSpec};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treesmooth"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_probabilities(text: &str) -> Vec<f64> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,proba"));
    lines
        .enumerate()
        .map(|(i, l)| {
            let (row, p) = l.split_once(',').unwrap();
            assert_eq!(row.parse::<usize>().unwrap(), i);
            p.parse().unwrap()
        })
        .collect()
}

#[test]
fn validate_matching_datasets() {
    let o = run(&["validate-data", "--dataset", "heart"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("270 samples, 15 features, classes 150/120"));
    for name in ["haberman", "diabetes", "Habermann", "pima"] {
        assert_eq!(
            run(&["validate-data", "--dataset", name]).status.code(),
            Some(0),
            "{name}"
        );
    }
}

#[test]
fn validate_reports_breast_cancer_sample_mismatch() {
    let o = run(&["validate-data", "--dataset", "breast-cancer"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(
        out.starts_with("277 samples, 9 features, classes 196/81"),
        "{out}"
    );
    assert!(out.contains("sample count 277, expected 286"), "{out}");
}

#[test]
fn validate_by_path_and_truncated_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("heart.csv");
    std::fs::copy(treesmooth::dataset::data_dir().join("heart.csv"), &good).unwrap();
    assert_eq!(
        run(&["validate-data", "--path", good.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );

    let text = std::fs::read_to_string(&good).unwrap();
    let cut = &text[..text.len() / 2];
    let cut = &cut[..cut.rfind(',').unwrap()];
    let bad = dir.path().join("heart_cut.csv");
    std::fs::write(&bad, cut).unwrap();
    let o = run(&["validate-data", "--path", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn unknown_dataset_lists_registry() {
    let o = run(&["bench", "--dataset", "iris", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for name in ["breast-cancer", "haberman", "heart", "diabetes"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let cases: [&[&str]; 7] = [
        &["bench", "--dataset", "heart", "--method", "lasso"],
        &["bench", "--dataset", "heart", "--reps", "many"],
        &["bench", "--dataset", "heart", "--folds", "1"],
        &[
            "bench",
            "--dataset",
            "heart",
            "--method",
            "none",
            "--lambda-grid",
            "1,2",
        ],
        &["predict", "--dataset", "heart", "--method", "hs"],
        &[
            "predict",
            "--dataset",
            "heart",
            "--method",
            "hs",
            "--lambda",
            "1",
            "--alpha",
            "2",
        ],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(run(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run(&[
        "bench",
        "--dataset",
        "heart",
        "--method",
        "beta",
        "--protocol",
        "cv",
        "--reps",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(
        table.contains("heart") && table.contains("beta") && table.contains('±'),
        "{table}"
    );
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
    assert_eq!(doc["config"]["master_seed"], 7);
    assert_eq!(
        doc["config"]["grid"]["values"].as_array().unwrap().len(),
        81
    );
    assert_eq!(doc["config"]["forest"]["tree"]["max_features"], "sqrt");
}

#[test]
fn bench_echoes_lambda_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hs.json");
    let o = run(&[
        "bench",
        "--dataset",
        "haberman",
        "--method",
        "hs",
        "--lambda-grid",
        "0.001,0.01,0.1,1,10,25,50,100,200",
        "--reps",
        "1",
        "--trees",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(
        doc["config"]["grid"],
        serde_json::json!({"method": "hs", "values": [0.001, 0.01, 0.1, 1.0, 10.0, 25.0, 50.0, 100.0, 200.0]})
    );
    assert_eq!(doc["config"]["forest"]["n_trees"], 20);
}

#[test]
fn bench_csv_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rows.csv");
    let o = run(&[
        "bench",
        "--dataset",
        "heart",
        "--method",
        "hs",
        "--protocol",
        "holdout",
        "--reps",
        "3",
        "--trees",
        "10",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("heart,holdout,hs,0,"));
}

fn dump(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let model = dir.join(format!("model{}.json", extra.len()));
    let mut args = vec![
        "dump-model",
        "--dataset",
        "haberman",
        "--trees",
        "25",
        "--seed",
        "3",
        "--out",
    ];
    args.push(model.to_str().unwrap());
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    model
}

#[test]
fn dump_load_predict_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let model = dump(
        dir.path(),
        &["--method", "beta", "--alpha", "30", "--beta", "10"],
    );
    let o = run(&["load-model", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).starts_with("25 trees, 3 features"),
        "{}",
        stdout(&o)
    );

    let input = dir.path().join("x.csv");
    std::fs::copy(treesmooth::dataset::data_dir().join("haberman.csv"), &input).unwrap();
    let o = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let from_file = read_probabilities(&stdout(&o));

    let ds = load_bundled("haberman").unwrap();
    let cfg = ForestConfig {
        n_trees: 25,
        ..ForestConfig::default()
    }
    .with_seed(3);
    let forest = apply(
        &fit_forest(&ds, &cfg).unwrap(),
        RegularizerSpec::beta(30.0, 10.0).unwrap(),
    )
    .unwrap();
    let all: Vec<usize> = (0..ds.n_samples()).collect();
    assert_eq!(from_file, forest.predict_rows(&ds, &all).unwrap());

    // fitting inside predict gives the same numbers
    let o = run(&[
        "predict",
        "--dataset",
        "haberman",
        "--trees",
        "25",
        "--seed",
        "3",
        "--method",
        "beta",
        "--alpha",
        "30",
        "--beta",
        "10",
    ]);
    assert_eq!(read_probabilities(&stdout(&o)), from_file);
}

#[test]
fn beta_calibration_changes_predictions() {
    let base = [
        "predict",
        "--dataset",
        "heart",
        "--trees",
        "20",
        "--seed",
        "5",
    ];
    let none = run(&base);
    let mut args = base.to_vec();
    args.extend_from_slice(&["--method", "beta", "--alpha", "100", "--beta", "100"]);
    let beta = run(&args);
    assert_eq!(none.status.code(), Some(0));
    assert_eq!(beta.status.code(), Some(0));
    let a = read_probabilities(&stdout(&none));
    let b = read_probabilities(&stdout(&beta));
    assert_eq!(a.len(), 270);
    assert!(a.iter().zip(&b).any(|(x, y)| x != y));
}

#[test]
fn predict_rejects_wrong_feature_count() {
    let dir = tempfile::tempdir().unwrap();
    let model = dump(dir.path(), &[]);
    let input = dir.path().join("narrow.csv");
    std::fs::write(&input, "a,b\n1,2\n3,4\n").unwrap();
    let o = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 0"), "{}", stderr(&o));
}

#[test]
fn invalid_model_files_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let model = dump(dir.path(), &[]);
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    doc["schema_version"] = serde_json::json!(99);
    let wrong_version = dir.path().join("v99.json");
    std::fs::write(&wrong_version, doc.to_string()).unwrap();
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{\"trees\": 3}").unwrap();
    for path in [&wrong_version, &garbage] {
        let o = run(&["load-model", "--model", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{}", path.display());
    }
}

#[test]
fn calibrated_model_cannot_be_calibrated_again() {
    let dir = tempfile::tempdir().unwrap();
    let model = dump(dir.path(), &["--method", "hs", "--lambda", "10"]);
    let input = dir.path().join("x.csv");
    std::fs::copy(treesmooth::dataset::data_dir().join("haberman.csv"), &input).unwrap();
    let o = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--method",
        "hs",
        "--lambda",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
