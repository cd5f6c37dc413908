//! End-to-end behavior of the `gpdelta` binary: file formats and the
//! exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gpdelta(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpdelta"))
        .args(args)
        .current_dir(dir)
        .env("GPDELTA_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn offline(dir: &Path, preset: &str, out: &str) {
    let o = gpdelta(&["offline", "--preset", preset, "--out", out], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn offline_writes_bundle_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    offline(dir.path(), "paper-1d", "a");
    offline(dir.path(), "paper-1d", "b");
    let a = fs::read(dir.path().join("a/bundle.gpdb")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/bundle.gpdb")).unwrap());
    let meta = json(&dir.path().join("a/meta.json"));
    assert_eq!(meta["details"]["n"], 11);
    assert_eq!(meta["details"]["t"], 100);
    assert_eq!(meta["details"]["p"], 1);
    assert_eq!(meta["software_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(meta["config"]["experiment"]["kernel"]["amplitude"], 0.1);
    let bundle = gpdelta_core::load_bundle(dir.path().join("a/bundle.gpdb")).unwrap();
    assert_eq!((bundle.meta.n, bundle.meta.t, bundle.meta.p), (11, 100, 1));
}

#[test]
fn empty_training_set_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"training":{"planned_inputs":[],"measurements":[],"queries":[[0.5]]}}"#,
    )
    .unwrap();
    let o = gpdelta(
        &["offline", "--config", "cfg.json", "--out", "x"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "validation");
    assert!(err["message"].as_str().unwrap().contains("empty"));
}

#[test]
fn explicit_training_data_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"training":{"planned_inputs":[[0.0],[0.5],[1.0]],"measurements":[0.0,1.0,0.0],"queries":[[0.25],[0.75]]}}"#,
    )
    .unwrap();
    let o = gpdelta(
        &["offline", "--config", "cfg.json", "--out", "x"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!dir.path().join("x/deltas.json").exists());
    fs::write(dir.path().join("d.json"), "[[0.01],[0.0],[-0.01]]").unwrap();
    let o = gpdelta(
        &[
            "correct",
            "--bundle",
            "x/bundle.gpdb",
            "--prediction",
            "x/prediction.json",
            "--deltas",
            "d.json",
            "--out",
            "c.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn zero_deltas_reproduce_the_prediction_file_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, n, p) in [("paper-1d", 11, 1), ("paper-2d", 121, 2)] {
        offline(dir.path(), preset, preset);
        let zeros = serde_json::to_string(&vec![vec![0.0; p]; n]).unwrap();
        fs::write(dir.path().join("zero.json"), zeros).unwrap();
        let pred = format!("{preset}/prediction.json");
        let o = gpdelta(
            &[
                "correct",
                "--bundle",
                &format!("{preset}/bundle.gpdb"),
                "--prediction",
                &pred,
                "--deltas",
                "zero.json",
                "--data",
                &format!("{preset}/data.json"),
                "--out",
                "out.json",
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(
            fs::read(dir.path().join("out.json")).unwrap(),
            fs::read(dir.path().join(&pred)).unwrap()
        );
        let meta = json(&dir.path().join("out.json.meta.json"));
        assert_eq!(meta["details"]["mode"], "paper_diag");
    }
}

#[test]
fn correction_moves_toward_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    offline(dir.path(), "paper-1d", "r");
    let o = gpdelta(
        &[
            "correct",
            "--bundle",
            "r/bundle.gpdb",
            "--prediction",
            "r/prediction.json",
            "--deltas",
            "r/deltas.json",
            "--out",
            "c.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mean = |p: &str| -> Vec<f64> {
        serde_json::from_value(json(&dir.path().join(p))["mean"].clone()).unwrap()
    };
    let (r, c, u) = (
        mean("r/reference.json"),
        mean("c.json"),
        mean("r/prediction.json"),
    );
    let mae =
        |a: &[f64]| a.iter().zip(&r).map(|(x, y)| (x - y).abs()).sum::<f64>() / r.len() as f64;
    assert!(mae(&c) < 0.5 * mae(&u));
}

#[test]
fn wrong_delta_count_names_expected_n() {
    let dir = tempfile::tempdir().unwrap();
    offline(dir.path(), "paper-1d", "r");
    fs::write(dir.path().join("d.json"), "[[0.0],[0.0]]").unwrap();
    let o = gpdelta(
        &[
            "correct",
            "--bundle",
            "r/bundle.gpdb",
            "--prediction",
            "r/prediction.json",
            "--deltas",
            "d.json",
            "--out",
            "c.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("expected 11"), "{}", stderr(&o));
}

#[test]
fn stale_and_malformed_artifacts_exit_3_and_missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    offline(dir.path(), "paper-1d", "one");
    offline(dir.path(), "paper-2d", "two");
    let run = |bundle: &str, data: Option<&str>| {
        let mut args = vec![
            "correct",
            "--bundle",
            bundle,
            "--prediction",
            "one/prediction.json",
            "--deltas",
            "one/deltas.json",
            "--out",
            "c.json",
        ];
        if let Some(d) = data {
            args.extend(["--data", d]);
        }
        gpdelta(&args, dir.path())
    };
    assert_eq!(code(&run("two/bundle.gpdb", None)), 3);

    // Same planned inputs, different measurements.
    let mut data = json(&dir.path().join("one/data.json"));
    data["measurements"][0] = Value::from(123.0);
    fs::write(dir.path().join("other.json"), data.to_string()).unwrap();
    let o = run("one/bundle.gpdb", Some("other.json"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let bytes = fs::read(dir.path().join("one/bundle.gpdb")).unwrap();
    fs::write(dir.path().join("cut.gpdb"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&run("cut.gpdb", None)), 3);
    fs::write(dir.path().join("junk.gpdb"), b"not a bundle").unwrap();
    assert_eq!(code(&run("junk.gpdb", None)), 3);

    let o = run("absent.gpdb", None);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("absent.gpdb"));
}

#[test]
fn full_hessian_mode_needs_a_full_bundle() {
    let dir = tempfile::tempdir().unwrap();
    offline(dir.path(), "paper-1d", "diag");
    let args = |b: &str| {
        vec![
            "correct".to_string(),
            "--bundle".into(),
            format!("{b}/bundle.gpdb"),
            "--prediction".into(),
            format!("{b}/prediction.json"),
            "--deltas".into(),
            format!("{b}/deltas.json"),
            "--mode".into(),
            "full-hessian".into(),
            "--out".into(),
            "c.json".into(),
        ]
    };
    let o = gpdelta(
        &args("diag").iter().map(String::as_str).collect::<Vec<_>>(),
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let o = gpdelta(
        &[
            "offline",
            "--preset",
            "paper-1d",
            "--mode",
            "full-hessian",
            "--out",
            "full",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let o = gpdelta(
        &args("full").iter().map(String::as_str).collect::<Vec<_>>(),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn bad_flags_and_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&gpdelta(&["simulate", "--mode", "sideways"], dir.path())),
        2
    );
    assert_eq!(
        code(&gpdelta(&["simulate", "--preset", "paper-3d"], dir.path())),
        2
    );
    assert_eq!(
        code(&gpdelta(&["simulate", "--trials", "0"], dir.path())),
        2
    );
    fs::write(dir.path().join("bad.json"), r#"{"trails": 4}"#).unwrap();
    assert_eq!(
        code(&gpdelta(&["simulate", "--config", "bad.json"], dir.path())),
        2
    );
    assert_eq!(
        code(&gpdelta(&["simulate", "--config", "nope.json"], dir.path())),
        4
    );
    let o = Command::new(env!("CARGO_BIN_EXE_gpdelta"))
        .args(["audit", "--n", "3"])
        .env("GPDELTA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_json_separates_timing() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpdelta(
        &[
            "simulate", "--preset", "paper-1d", "--trials", "4", "--seed", "3", "--out", "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("r.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["base_seed"], 3);
    assert_eq!(r["results"]["trials"].as_array().unwrap().len(), 4);
    assert!(r["results"]["trials"][0].get("t_retrain_s").is_none());
    assert_eq!(r["timing"]["nondeterministic"], true);
    assert_eq!(r["timing"]["trials"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_csv_is_tidy_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpdelta(
        &[
            "simulate", "--preset", "paper-2d", "--trials", "2", "--format", "csv", "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "index,seed,mae_corrupted,mae_corrected,cov_err_corrupted,cov_err_corrected,improvement_pct,delta_warnings");
    assert_eq!(lines.len(), 3);
    let meta = json(&dir.path().join("t.csv.meta.json"));
    assert_eq!(meta["details"]["aggregates"]["completed"], 2);
}

#[test]
fn report_emits_plot_data_from_files_and_from_simulation() {
    let dir = tempfile::tempdir().unwrap();
    offline(dir.path(), "paper-1d", "r");
    let o = gpdelta(
        &[
            "report",
            "--data",
            "r/data.json",
            "--series",
            "corrupted=r/prediction.json",
            "--series",
            "perfect=r/reference.json",
            "--out",
            "p.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.starts_with("x,mean,lower,upper,series\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 100);

    let o = gpdelta(
        &["report", "--preset", "paper-2d", "--out", "s.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("s.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["x0", "x1", "mean", "lower", "upper", "series"]
    );
    let series: std::collections::BTreeSet<String> =
        rdr.records().map(|r| r.unwrap()[5].to_string()).collect();
    assert_eq!(
        series.into_iter().collect::<Vec<_>>(),
        ["corrected", "corrupted", "perfect", "truth"]
    );
}

#[test]
fn audit_reports_each_family() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpdelta(
        &[
            "audit", "--n", "11", "--p", "1", "--seed", "1", "--out", "a.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for family in [
        "mean_jacobian",
        "mean_hessian_diag",
        "cov_jacobian",
        "cov_hessian_diag",
    ] {
        assert!(
            text.lines()
                .any(|l| l.starts_with("PASS ") && l.contains(family)),
            "{text}"
        );
    }
    assert_eq!(text.lines().last(), Some("PASS"));
    assert_eq!(
        json(&dir.path().join("a.json"))["details"]["report"]["pass"],
        true
    );
}

#[test]
fn audit_failure_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"audit":{"settings":{"jacobian_step":1e-5,"hessian_step":1e-4,"ladder":0,"jacobian_tol":1e-14,"hessian_tol":1e-14,"full_hessian":false}}}"#,
    )
    .unwrap();
    let o = gpdelta(
        &["audit", "--config", "cfg.json", "--n", "4", "--t", "3"],
        dir.path(),
    );
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .any(|l| l.starts_with("FAIL")));
}

#[test]
fn bench_writes_rows_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpdelta(
        &[
            "bench",
            "--n",
            "20,40",
            "--t",
            "10",
            "--repeats",
            "2",
            "--out",
            "b.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(text.starts_with(
        "n,t,retrain_s,train_s,online_s,batch_s,offline_s,speedup_online,speedup_batch\n"
    ));
    assert_eq!(text.lines().count(), 3);
    let meta = json(&dir.path().join("b.csv.meta.json"));
    assert!(meta["details"]["slopes"][0]["retrain"].is_number());
    assert!(stderr(&o).contains("slope vs n"));
}

#[test]
fn oversized_bench_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpdelta(&["bench", "--n", "100000", "--t", "10000"], dir.path());
    assert_eq!(code(&o), 5);
}
