use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_concern-dp"));
    c.env_remove("CONCERNDP_OUT_DIR");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn small_dataset(dir: &Path) -> String {
    let o = run(
        dir,
        &["gen-data", "--users", "40", "--statuses", "400", "--counts", "4,30,6", "--seed", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("dataset.csv").to_str().unwrap().to_string()
}

#[test]
fn gen_data_rejects_counts_that_do_not_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gen-data", "--users", "3"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn train_writes_regression_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let o = run(dir.path(), &["train", "--model", "lr", "--data", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lr_metrics.json")).unwrap()).unwrap();
    for side in ["train", "test"] {
        for key in ["rmse", "evs"] {
            assert!(metrics[side][key].is_number(), "{side}.{key}");
        }
    }
    assert!(dir.path().join("lr.json").exists());
    assert!(dir.path().join("lr.manifest.json").exists());
}

#[test]
fn train_rejects_full_split_and_unknown_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let o = run(dir.path(), &["train", "--model", "lr", "--data", &data, "--split", "1.0"]);
    assert!(!o.status.success());
    let o = run(dir.path(), &["train", "--model", "forest", "--data", &data]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("possible values: lr, svr, mlp, nb, svm"));
}

#[test]
fn config_file_overrides_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let conf = dir.path().join("train.conf");
    fs::write(&conf, "# short run\nmlp.epochs = 2\nsplit = 0.75\n").unwrap();
    let o = run(
        dir.path(),
        &["train", "--model", "mlp", "--data", &data, "--config", conf.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("mlp.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["mlp"]["epochs"], 2);
    assert_eq!(manifest["config"]["train_fraction"], 0.75);

    fs::write(&conf, "bogus = 1\n").unwrap();
    let o = run(
        dir.path(),
        &["train", "--model", "lr", "--data", &data, "--config", conf.to_str().unwrap()],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn simulate_names_missing_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let models = dir.path().join("models");
    let o = run(
        dir.path(),
        &["simulate", "--data", &data, "--controllers", "gold,svr", "--models-dir", models.to_str().unwrap()],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("svr.json"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_trace_and_distance_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let o = run(
        dir.path(),
        &["simulate", "--data", &data, "--controllers", "global,gold", "--iters", "30", "--folds", "3"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "controller,iteration,oobudget_count,oobudget_ratio,available,utility_metric,utility_value"
    );
    for name in ["global", "gold"] {
        let rows = trace.lines().filter(|l| l.starts_with(&format!("{name},"))).count();
        assert!((1..=30).contains(&rows), "{name}: {rows} rows");
    }
    let table = fs::read_to_string(dir.path().join("distances.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "iteration,gold,global");
    assert!(table.lines().last().unwrap().starts_with("distance,0,"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["controllers"][1]["distance_to_gold"], 0.0);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["score", "--labels", "no,no,yes,yes,yes"])
        .env("CONCERNDP_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("LoPC"));
    assert!(dir.path().join("score.json").exists());
}

#[test]
fn score_needs_some_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["score"]);
    assert!(!o.status.success());
    let o = run(dir.path(), &["score", "--scores", "1,2,3"]);
    assert!(!o.status.success());
}

#[test]
fn verify_dp_reports_failure_for_noiseless_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["verify-dp", "--mechanism", "noiseless", "--samples", "100000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("fail"));
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["pass"], false);

    let o = run(dir.path(), &["verify-dp", "--samples", "10"]);
    assert!(!o.status.success());
}

#[test]
fn smote_balances_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let o = run(dir.path(), &["smote", "--data", &data, "--k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let counts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("smote_counts.json")).unwrap()).unwrap();
    for l in ["LoPC", "MePC", "HiPC"] {
        assert_eq!(counts["after"][l], 30);
    }
    let origins = fs::read_to_string(dir.path().join("smote_origins.csv")).unwrap();
    assert_eq!(origins.lines().count(), 1 + 26 + 24);
}
