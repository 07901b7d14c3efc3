use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

/// Shared table cache so each table radius is built once per test run.
fn cache() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn kwlat(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwlat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quadrature")
        .arg("1024")
        .env("KW_LATTICE_CACHE", cache())
        .output()
        .expect("run kwlat")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(out: &Path, name: &str) -> Value {
    let p: PathBuf = out.join(format!("{name}-report.json"));
    serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap()
}

#[test]
fn greens_check_matches_closed_forms() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(out.path(), &["greens", "check", "--radius", "64"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(out.path(), "greens-check");
    assert_eq!(r["status"], "pass");
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["table"]["exact_radius"], 64);
    assert!(r["table"]["fingerprint"].as_str().unwrap().len() >= 8);
    let v = r["result"]["values"].as_array().unwrap();
    let diag = v.iter().find(|e| e["x"] == serde_json::json!([1, 1])).unwrap();
    assert!((diag["table"].as_f64().unwrap() + 1.0 / PI).abs() < 1e-6);
}

#[test]
fn greens_build_exports_the_table() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(out.path(), &["greens", "build", "--radius", "16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.path().join("greens-build-table.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,phi0"));
    assert_eq!(lines.count(), 33 * 33);
    assert!(report(out.path(), "greens-build")["result"]["asymptotic_fit"].is_null());
}

#[test]
fn source_solve_satisfies_the_energy_identity_and_is_reproducible() {
    let args = ["solve", "source", "--kappa", "0.5", "--sigma", "4", "--beta", "0", "--radius", "256", "--table-radius", "128"];
    let a = tempfile::tempdir().unwrap();
    let o = kwlat(a.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(a.path(), "solve-source");
    let s = &r["result"]["solve"];
    let alpha = s["alpha"].as_f64().unwrap();
    assert!((alpha - 16.0 * PI).abs() < 1e-12);
    let identity = s["identity_residual"].as_f64().unwrap().abs();
    assert!(identity / (alpha - 0.0) < 1e-3);
    assert_eq!(r["config"]["sigma"], 4.0);
    assert!(a.path().join("solve-source-solution.csv").exists());

    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&kwlat(b.path(), &args)), 0);
    let mut again = report(b.path(), "solve-source");
    again["config"]["out"] = r["config"]["out"].clone();
    assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    assert_eq!(
        std::fs::read(a.path().join("solve-source-solution.csv")).unwrap(),
        std::fs::read(b.path().join("solve-source-solution.csv")).unwrap()
    );
}

#[test]
fn layers_hold_for_an_absorption_family() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(
        out.path(),
        &["verify", "layers", "--kappa", "2", "--beta", "12.6", "--alphas", "9,7,8", "--table-radius", "128"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(out.path(), "verify-layers");
    assert_eq!(r["result"]["layers"]["holds"], true);
    assert_eq!(r["result"]["alphas"], serde_json::json!([7.0, 8.0, 9.0]));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("run.json");
    std::fs::write(&cfg, r#"{"kappa": 0.5, "alpha": 30.0, "radius": 32, "table_radius": 64}"#).unwrap();
    let o = kwlat(out.path(), &["solve", "source", "--config", cfg.to_str().unwrap(), "--sigma", "3", "--radius", "24"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(out.path(), "solve-source");
    assert_eq!(r["config"]["radius"], 24);
    assert!(r["config"].get("alpha").is_none());
    assert_eq!(r["result"]["solve"]["radius"], 24);
    assert!((r["result"]["solve"]["sigma"].as_f64().unwrap() - 3.0).abs() < 1e-12);

    std::fs::write(&cfg, r#"{"kapa": 0.5}"#).unwrap();
    let bad = kwlat(out.path(), &["solve", "source", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("kapa"));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let out = tempfile::tempdir().unwrap();
    let p = out.path();
    assert_eq!(code(&kwlat(p, &["solve", "absorption", "--kappa", "2", "--alpha", "7"])), 2);
    assert_eq!(code(&kwlat(p, &["solve", "source", "--kappa", "0.5", "--sigma", "4", "--alpha", "3"])), 2);
    assert_eq!(code(&kwlat(p, &["solve", "source", "--kappa", "0.5", "--sigma", "1.5", "--table-radius", "64"])), 2);
    assert_eq!(code(&kwlat(p, &["solve", "frobnicate"])), 2);
    let stalled = kwlat(
        p,
        &["solve", "source", "--kappa", "0.5", "--sigma", "4", "--radius", "32", "--max-iter", "2", "--table-radius", "64"],
    );
    assert_eq!(code(&stalled), 3, "{}", stderr(&stalled));
    assert!(stderr(&stalled).contains("did not converge"));
    let stated = kwlat(p, &["verify", "barrier", "--band", "stated"]);
    assert_eq!(code(&stated), 4);
    assert_eq!(report(p, "verify-barrier")["status"], "fail");
}

#[test]
fn barrier_with_widened_band_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(out.path(), &["verify", "barrier"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(out.path(), "verify-barrier");
    assert_eq!(r["result"]["barrier"]["m0"], 10);
    assert_eq!(r["result"]["far_scan"]["violations"], 0);
}

#[test]
fn sweep_reports_every_run_and_fails_on_a_bad_one() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(
        out.path(),
        &["sweep", "alpha", "--kappa", "2", "--beta", "12.6", "--alphas", "7,8,13", "--radius", "32", "--table-radius", "64", "--jobs", "2"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(out.path().join("sweep-alpha-runs.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    assert_eq!(&headers[0], "index");
    let status = headers.iter().position(|h| h == "status").unwrap();
    let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][status], "ok");
    assert_eq!(&rows[1][status], "ok");
    assert_eq!(&rows[2][status], "argument_error");
    assert_eq!(report(out.path(), "sweep-alpha")["status"], "partial");

    let ok = kwlat(
        out.path(),
        &["sweep", "kappa", "--equation", "source", "--sigma", "3", "--kappas", "0.5,1", "--radius", "32", "--table-radius", "64"],
    );
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let runs = report(out.path(), "sweep-kappa")["result"]["runs"].clone();
    for r in runs.as_array().unwrap() {
        assert!((r["sigma"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    }
}

#[test]
fn verification_suites_pass() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(out.path(), &["verify", "maxprinciple", "--trials", "60", "--radius", "8", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(report(out.path(), "verify-maxprinciple")["result"]["trials"], 60);
    let o = kwlat(out.path(), &["verify", "decay", "--radius", "64", "--trials", "2", "--table-radius", "64"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(report(out.path(), "verify-decay")["result"]["cases"].as_array().unwrap().len(), 6);
}

#[test]
fn threshold_scan_with_given_constants() {
    let out = tempfile::tempdir().unwrap();
    let o = kwlat(
        out.path(),
        &["scan", "thresholds", "--c0", "1.4", "--c1", "5", "--c2", "18", "--points", "50", "--kappa", "1e-100"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.path().join("scan-thresholds-h0.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("sigma,h0,kappa_star_flag"));
    assert_eq!(text.lines().count(), 51);
    let r = report(out.path(), "scan-thresholds");
    assert!(r["table"].is_null());
    let a0 = r["result"]["scan"]["a0"].as_f64().unwrap();
    assert!(a0 > 2.0 && a0 < 20.0);
}

#[test]
fn small_extremal_run_writes_gaps_and_passes_the_limit_check() {
    let out = tempfile::tempdir().unwrap();
    let beta = format!("{}", 4.0 * PI);
    let o = kwlat(
        out.path(),
        &[
            "solve", "extremal", "--kappa", "2", "--beta", &beta, "--box-radius", "128", "--mid-radius", "64",
            "--limit-offsets", "1,0.1,0.01", "--inner-radius", "16",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(out.path(), "solve-extremal");
    assert_eq!(r["table"]["exact_radius"], 132);
    assert!(r["result"]["extremal"]["relative_energy_error"].as_f64().unwrap() < 0.02);
    assert_eq!(r["result"]["limit_check"]["gaps_decreasing"], true);
    let gaps = std::fs::read_to_string(out.path().join("solve-extremal-gaps.csv")).unwrap();
    assert_eq!(gaps.lines().next(), Some("n,gap"));
    assert!(gaps.lines().count() > 2);
}
