use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixorder::{Dataset, FitResult};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixorder"))
}

fn faithful() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/faithful.csv")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn analyze_faithful() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("out.json");
    let out = run(bin()
        .args(["analyze", "--input"])
        .arg(faithful())
        .arg("--output")
        .arg(&json));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("g_hat = 2"), "{stdout}");
    assert!(stdout.contains("argmin BIC = 2"), "{stdout}");

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["stp"]["g_hat"], 2);
    assert_eq!(v["stp"]["split"]["n1"], 136);
    let first = &v["stp"]["trail"][0];
    assert_eq!(first["g"], 1);
    assert!(first["log_p"].as_f64().unwrap() < (1e-20f64).ln());
    assert_eq!(v["ic"]["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn analyze_is_deterministic_and_seed_dependent() {
    let go = |seed: &str| {
        let out = run(bin()
            .args(["analyze", "--l", "1", "--g-max", "3", "--ic-g-max", "2", "--seed", seed, "--input"])
            .arg(faithful()));
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(go("4"), go("4"));
    assert_ne!(go("4"), go("5"));
}

#[test]
fn malformed_csv_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n3,abc\n").unwrap();
    let out = run(bin().args(["analyze", "--input"]).arg(&bad));
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("row 3") && err.contains("column 2"), "{err}");
}

#[test]
fn too_few_rows_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = dir.path().join("tiny.csv");
    std::fs::write(&tiny, "1\n2\n3\n4\n").unwrap();
    let out = run(bin().args(["analyze", "--input"]).arg(&tiny));
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
}

#[test]
fn missing_file_is_an_io_error() {
    let out = run(bin().args(["fit", "--g", "1", "--input", "/nonexistent/data.csv"]));
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn unreachable_overlap_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"g0":2,"d":1,"omega_bar_target":0.5,"seed":1,"mc_samples":1}"#,
    )
    .unwrap();
    let out = run(bin()
        .args(["datagen", "--n", "10", "--input"])
        .arg(&spec)
        .arg("--output")
        .arg(dir.path().join("d.csv"))
        .arg("--params-output")
        .arg(dir.path().join("p.json")));
    assert_eq!(out.status.code(), Some(5), "{}", text(&out.stderr));
}

#[test]
fn datagen_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"g0":2,"d":1,"omega_bar_target":0.05,"seed":11}"#).unwrap();
    let gen = |tag: &str| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let params = dir.path().join(format!("{tag}.json"));
        let out = run(bin()
            .args(["datagen", "--n", "1000", "--input"])
            .arg(&spec)
            .arg("--output")
            .arg(&csv)
            .arg("--params-output")
            .arg(&params));
        assert!(out.status.success(), "{}", text(&out.stderr));
        (csv, params)
    };
    let (csv_a, params_a) = gen("a");
    let (csv_b, params_b) = gen("b");
    assert_eq!(std::fs::read(&csv_a).unwrap(), std::fs::read(&csv_b).unwrap());
    assert_eq!(std::fs::read(&params_a).unwrap(), std::fs::read(&params_b).unwrap());

    let data = Dataset::from_csv_path(&csv_a).unwrap();
    assert_eq!((data.n(), data.d()), (1000, 1));
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&params_a).unwrap()).unwrap();
    let achieved = p["achieved_omega_bar"].as_f64().unwrap();
    assert!((0.0475..=0.0525).contains(&achieved), "{achieved}");
    let truth: mixorder::MixtureParams = serde_json::from_value(p.clone()).unwrap();

    let fit_json = dir.path().join("fit.json");
    let out = run(bin()
        .args(["fit", "--g", "2", "--input"])
        .arg(&csv_a)
        .arg("--output")
        .arg(&fit_json));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let fit: FitResult = serde_json::from_str(&std::fs::read_to_string(&fit_json).unwrap()).unwrap();

    let sorted = |p: &mixorder::MixtureParams| {
        let mut v: Vec<(f64, f64, f64)> = p
            .components()
            .iter()
            .zip(p.weights())
            .map(|(c, &w)| (c.mean()[0], c.cov()[0], w))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    for ((m, var, w), (m_hat, _, _)) in sorted(&truth).into_iter().zip(sorted(&fit.params)) {
        let se = (var / (1000.0 * w)).sqrt();
        assert!((m - m_hat).abs() < 3.0 * se, "mean {m} vs {m_hat}, se {se}");
    }
}

#[test]
fn simulate_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"[{"id":"null","g0":1,"d":1,"n1":80,"r":2,"base_seed":3,"run_ic":true}]"#,
    )
    .unwrap();
    let go = |threads: &str| {
        let csv = dir.path().join(format!("t{threads}.csv"));
        let out = run(bin()
            .args(["simulate", "--threads", threads, "--input"])
            .arg(&grid)
            .arg("--output")
            .arg(&csv));
        assert!(out.status.success(), "{}", text(&out.stderr));
        (
            std::fs::read(&csv).unwrap(),
            std::fs::read(csv.with_extension("json")).unwrap(),
        )
    };
    let one = go("1");
    let eight = go("8");
    assert_eq!(one, eight);
    let csv = text(&one.0);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("scenario_id,g0,omega_bar,d,n1,l,variant,alpha,r,cov_prop"));
}

#[test]
fn conflicting_level_flags_are_rejected() {
    let out = run(bin()
        .args(["analyze", "--alpha", "0.05", "--kappa", "1", "--input"])
        .arg(faithful()));
    assert_eq!(out.status.code(), Some(2));
}
