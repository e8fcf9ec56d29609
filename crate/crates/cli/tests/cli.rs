use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_newton-spectra"));
    c.env_remove("NEWTON_SPECTRA_OUT_DIR");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stderr));
    })
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn generate_sphere_vertex_count() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &[
            "generate", "--shape", "sphere", "--radius", "1", "--subdiv", "3", "-o", "s.off",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("s.off")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split_whitespace().next(), Some("642"));
    assert_eq!(json(&out)["mesh_stats"]["vertex_count"], 642);
}

#[test]
fn generate_ellipsoid_and_torus() {
    let dir = tmp();
    let e = run(
        dir.path(),
        &[
            "generate",
            "--shape",
            "ellipsoid",
            "--a",
            "2",
            "--b",
            "1",
            "--c",
            "1",
            "--subdiv",
            "3",
            "-o",
            "e.off",
        ],
    );
    assert_eq!(e.status.code(), Some(0));
    let e = json(&e);
    assert_eq!(e["mesh_stats"]["passes"], true);
    assert_eq!(e["mesh_stats"]["closed"], true);
    let t = run(
        dir.path(),
        &[
            "generate", "--shape", "torus", "--R", "2", "--r", "0.5", "--nu", "64", "--nv", "32", "-o", "t.off",
        ],
    );
    assert_eq!(t.status.code(), Some(0));
    assert_eq!(json(&t)["mesh_stats"]["euler_characteristic"], 0);
}

#[test]
fn generate_rejects_bad_descriptor() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &["generate", "--shape", "sphere", "--radius", "-1", "-o", "s.off"],
    );
    assert_eq!(out.status.code(), Some(64));
    let out = run(dir.path(), &["generate", "--shape", "cube", "-o", "s.off"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(!dir.path().join("s.off").exists());
}

#[test]
fn verify_sphere_is_sphere_like() {
    let dir = tmp();
    run(
        dir.path(),
        &["generate", "--shape", "sphere", "--subdiv", "3", "-o", "s.off"],
    );
    let out = run(dir.path(), &["verify", "--mesh", "s.off", "--order", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    for key in [
        "schema_version",
        "config",
        "mesh_stats",
        "curvature_summary",
        "identities",
        "spectrum",
        "birman_schwinger",
        "verdicts",
        "timings",
    ] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["verdicts"]["theorem"]["verdict"], "SphereLike");
    assert_eq!(r["verdicts"]["theorem"]["lambda_2_multiplicity"], 3);
    assert!(r["verdicts"]["theorem"]["tol_sphere"].as_f64().unwrap() > 0.0);
    assert_eq!(r["timings"], serde_json::json!({}));
    assert!(r["error"].is_null());
}

#[test]
fn verify_torus_precondition() {
    let dir = tmp();
    run(
        dir.path(),
        &[
            "generate", "--shape", "torus", "--R", "2", "--r", "0.5", "--nu", "64", "--nv", "32", "-o", "t.off",
        ],
    );
    let out = run(dir.path(), &["verify", "--mesh", "t.off", "--order", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("H_2") && stderr.contains("<= 0 at vertex"), "{stderr}");
    let r = json(&out);
    assert_eq!(r["error"]["kind"], "precondition");
    assert!(r["error"]["vertex"].is_u64());
    assert!(r["verdicts"].is_null());
}

#[test]
fn verify_ellipsoid_is_strictly_negative() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &[
            "verify",
            "--shape",
            "ellipsoid",
            "--a",
            "2",
            "--subdiv",
            "3",
            "--order",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["verdicts"]["theorem"]["verdict"], "StrictlyNegative");
    assert_eq!(r["verdicts"]["passed"], true);
}

#[test]
fn bs_scan_ellipsoid_crossings() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &[
            "bs-scan",
            "--shape",
            "ellipsoid",
            "--a",
            "2",
            "--subdiv",
            "2",
            "--csv",
            "scan.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    let crossings = r["birman_schwinger"]["crossings"].as_array().unwrap();
    assert!(crossings.len() >= 2);
    assert!(crossings.iter().all(|c| c["matched"] == true));
    let csv = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("mu,top_1,top_2,top_3,top_4"));
}

#[test]
fn bs_scan_sphere_tail_is_monotone() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &[
            "bs-scan", "--shape", "sphere", "--subdiv", "2", "--mu-min", "3", "--mu-max", "300", "--csv", "tail.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("tail.csv")).unwrap();
    let top: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(top.len(), 32);
    assert!(top.windows(2).all(|w| w[1] < w[0]), "{top:?}");
}

#[test]
fn empty_mu_range_is_usage_error() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &["bs-scan", "--shape", "sphere", "--mu-min", "2", "--mu-max", "1"],
    );
    assert_eq!(out.status.code(), Some(64));
    let out = run(dir.path(), &["bs-scan", "--shape", "sphere", "--mu-steps", "1"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn usage_errors() {
    let dir = tmp();
    assert_eq!(run(dir.path(), &["verify", "--bogus"]).status.code(), Some(64));
    assert_eq!(run(dir.path(), &["verify", "--order", "x"]).status.code(), Some(64));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(64));
    assert_eq!(run(dir.path(), &["verify"]).status.code(), Some(64));
    assert_eq!(
        run(dir.path(), &["verify", "--shape", "sphere", "--order", "2"])
            .status
            .code(),
        Some(64)
    );
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn reports_are_byte_identical() {
    let dir = tmp();
    let args = [
        "verify", "--shape", "bumped", "--subdiv", "2", "--order", "1", "--seed", "7",
    ];
    let a = run(dir.path(), &args);
    let b = run(dir.path(), &args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let scan = [
        "bs-scan",
        "--shape",
        "ellipsoid",
        "--a",
        "1.5",
        "--subdiv",
        "2",
        "--csv",
        "s.csv",
    ];
    let a = run(dir.path(), &scan);
    let csv_a = fs::read(dir.path().join("s.csv")).unwrap();
    let b = run(dir.path(), &scan);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(csv_a, fs::read(dir.path().join("s.csv")).unwrap());
}

#[test]
fn timings_only_on_request() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &["identities", "--shape", "sphere", "--subdiv", "2", "--timings"],
    );
    let r = json(&out);
    assert!(r["timings"]["identities"].as_f64().unwrap() >= 0.0);
    assert_eq!(r["config"]["timings"], true);
}

#[test]
fn config_file_and_flags() {
    let dir = tmp();
    fs::write(
        dir.path().join("run.cfg"),
        "# test\nshape = ellipsoid\na = 2\nsubdiv = 1\neigen_count = 6\n",
    )
    .unwrap();
    let out = run(
        dir.path(),
        &["spectrum", "--config", "run.cfg", "--subdiv", "2", "--csv", "eig.csv"],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["config"]["surface"]["subdiv"], 2);
    assert_eq!(r["config"]["surface"]["a"], 2.0);
    assert_eq!(r["mesh_stats"]["vertex_count"], 162);
    assert_eq!(r["spectrum"]["eigenvalues"].as_array().unwrap().len(), 6);
    let csv = fs::read_to_string(dir.path().join("eig.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    fs::write(dir.path().join("bad.cfg"), "colour = red\n").unwrap();
    assert_eq!(
        run(dir.path(), &["verify", "--config", "bad.cfg"]).status.code(),
        Some(64)
    );
}

#[test]
fn output_directory_from_environment() {
    let dir = tmp();
    let out = bin()
        .current_dir(dir.path())
        .env("NEWTON_SPECTRA_OUT_DIR", "results")
        .args(["identities", "--shape", "sphere", "--subdiv", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_slice(&fs::read(dir.path().join("results/identities.json")).unwrap()).unwrap();
    assert!(r["identities"]["minkowski_residual"].as_f64().unwrap() < 0.05);

    // an explicit flag beats the environment
    let out = bin()
        .current_dir(dir.path())
        .env("NEWTON_SPECTRA_OUT_DIR", "results")
        .args([
            "generate",
            "--shape",
            "sphere",
            "--subdiv",
            "1",
            "--output-dir",
            "meshes",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("meshes/sphere.off").exists());
}

#[test]
fn spectrum_matrix_export() {
    let dir = tmp();
    let out = run(
        dir.path(),
        &[
            "spectrum",
            "--shape",
            "sphere",
            "--subdiv",
            "1",
            "--matrices",
            "m.csv",
            "--method",
            "dense",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["spectrum"]["method"], "dense");
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("matrix,row,col,value"));
    assert!(csv.lines().any(|l| l.starts_with("M,")) && csv.lines().any(|l| l.starts_with("MW,")));
}
