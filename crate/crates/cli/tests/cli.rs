//! End-to-end tests of the `sgm` binary: exit codes, determinism, file
//! formats, and the sample -> fit -> aic workflow.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn write(path: &Path, contents: &str) {
    fs::write(path, contents).unwrap();
}

const LINEAR_MODEL: &str =
    r#"{"type":"components","components":[{"z":[0,0,1],"k":1,"theta":0.5}],"delta":0.001}"#;
const NULL_MODEL: &str = r#"{"type":"components","components":[{"z":[0,0,1],"k":1,"theta":0.0}],"delta":0.001}"#;

#[test]
fn sample_is_deterministic_and_header_only_at_zero() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    write(&model, LINEAR_MODEL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let r = sgm(&[
            "sample",
            "--model",
            model.to_str().unwrap(),
            "-n",
            "50",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0, "{r:?}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("x,y,z\n"));
    assert_eq!(text.lines().count(), 51);

    let empty = dir.path().join("empty.csv");
    let r = sgm(&[
        "sample",
        "--model",
        model.to_str().unwrap(),
        "-n",
        "0",
        "--out",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0);
    assert_eq!(fs::read_to_string(&empty).unwrap(), "x,y,z\n");
}

#[test]
fn lonlat_round_trips_through_fit() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    write(&model, LINEAR_MODEL);
    let samples = dir.path().join("s.csv");
    let r = sgm(&[
        "sample",
        "--model",
        model.to_str().unwrap(),
        "-n",
        "400",
        "--seed",
        "3",
        "--out",
        samples.to_str().unwrap(),
        "--format",
        "lonlat",
    ]);
    assert_eq!(code(&r), 0, "{r:?}");
    assert!(fs::read_to_string(&samples)
        .unwrap()
        .starts_with("lon_deg,lat_deg\n"));

    let report = dir.path().join("fit.json");
    let r = sgm(&[
        "fit",
        "--data",
        samples.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{r:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let theta = report["theta_hat"][0].as_f64().unwrap();
    assert!((theta - 0.5).abs() < 0.15, "theta {theta}");
    assert!(report["converged"].as_bool().unwrap());
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    write(&model, LINEAR_MODEL);

    // Header-only data: no rows.
    let empty = dir.path().join("empty.csv");
    write(&empty, "x,y,z\n");
    let out = dir.path().join("fit.json");
    let r = sgm(&[
        "fit",
        "--data",
        empty.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);

    // Malformed row: the message carries the line number.
    let bad = dir.path().join("bad.csv");
    write(&bad, "x,y,z\n0,0,1\n0,nope,1\n");
    let r = sgm(&[
        "fit",
        "--data",
        bad.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains(":3:"));

    // Latitude out of range.
    let bad_lat = dir.path().join("lat.csv");
    write(&bad_lat, "lon_deg,lat_deg\n10,95\n");
    let r = sgm(&[
        "fit",
        "--data",
        bad_lat.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);

    // Inadmissible model: total weight 1.2.
    let inadmissible = dir.path().join("inadmissible.json");
    write(
        &inadmissible,
        r#"{"type":"components","components":[{"z":[0,0,1],"k":2,"theta":0.6},{"z":[1,0,0],"k":2,"theta":0.6}],"delta":0.0}"#,
    );
    let s = dir.path().join("s.csv");
    let r = sgm(&[
        "sample",
        "--model",
        inadmissible.to_str().unwrap(),
        "-n",
        "5",
        "--out",
        s.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
    let r = sgm(&[
        "check",
        "--model",
        inadmissible.to_str().unwrap(),
        "--suite",
        "jacobian",
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn null_model_density_grid_is_uniform() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    write(&model, NULL_MODEL);
    let grid = dir.path().join("grid.csv");
    let r = sgm(&[
        "density-grid",
        "--model",
        model.to_str().unwrap(),
        "--resolution",
        "6",
        "--out",
        grid.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{r:?}");
    let text = fs::read_to_string(&grid).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lon_deg,lat_deg,density"));
    for line in lines {
        let density: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((density - 1.0).abs() < 1e-12, "{line}");
    }
}

#[test]
fn check_suites_pass_on_admissible_models() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    write(&model, LINEAR_MODEL);
    let model2 = dir.path().join("model2.json");
    write(
        &model2,
        r#"{"type":"quadratic","mu":[0.1,0,0],"A":[[0.2,0,0],[0,0,0],[0,0,-0.3]],"delta":0.001}"#,
    );
    let report = dir.path().join("check.json");
    let r = sgm(&[
        "check",
        "--model",
        model.to_str().unwrap(),
        "--model2",
        model2.to_str().unwrap(),
        "--suite",
        "all",
        "--seed",
        "5",
        "--resolution",
        "400",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{r:?}");
    let stdout = String::from_utf8_lossy(&r.stdout);
    for name in [
        "c-convexity",
        "jacobian-inequality",
        "sliding-mountain",
        "factored-jacobian",
    ] {
        assert!(stdout.contains(&format!("{name}: pass")), "{stdout}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(report["passed"].as_bool().unwrap());
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn aic_ranks_reports_and_rejects_mismatched_data() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    write(&model, LINEAR_MODEL);
    let null_model = dir.path().join("null.json");
    write(&null_model, NULL_MODEL);

    let data = dir.path().join("data.csv");
    let r = sgm(&[
        "sample",
        "--model",
        model.to_str().unwrap(),
        "-n",
        "500",
        "--seed",
        "11",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0);

    let fit_linear = dir.path().join("fit_linear.json");
    let fit_quadratic = dir.path().join("fit_quadratic.json");
    let quadratic_model = dir.path().join("quadratic.json");
    write(
        &quadratic_model,
        r#"{"type":"quadratic","mu":[0,0,0],"A":[[0,0,0],[0,0,0],[0,0,0]],"delta":0.000001}"#,
    );
    for (m, out) in [(&model, &fit_linear), (&quadratic_model, &fit_quadratic)] {
        let r = sgm(&[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--model",
            m.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0, "{r:?}");
    }

    let ranking = dir.path().join("ranking.json");
    let r = sgm(&[
        "aic",
        fit_linear.to_str().unwrap(),
        fit_quadratic.to_str().unwrap(),
        "--out",
        ranking.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{r:?}");
    let ranking: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&ranking).unwrap()).unwrap();
    // The 1-parameter linear family generated the data; 8 extra quadratic
    // parameters cannot buy back 14 AIC points.
    assert!(ranking[0]["report"]
        .as_str()
        .unwrap()
        .contains("fit_linear"));
    assert!(ranking[0]["aic"].as_f64().unwrap() <= ranking[1]["aic"].as_f64().unwrap());

    // Refit on different data: fingerprints differ, aic refuses to rank.
    let other = dir.path().join("other.csv");
    write(&other, "x,y,z\n1,0,0\n0,1,0\n0,0,1\n0,0,-1\n");
    let fit_other = dir.path().join("fit_other.json");
    let r = sgm(&[
        "fit",
        "--data",
        other.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        fit_other.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{r:?}");
    let r = sgm(&[
        "aic",
        fit_linear.to_str().unwrap(),
        fit_other.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 2);
}
