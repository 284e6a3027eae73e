use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hs_lift::functions::FunctionSpec;
use hs_lift::hermite::Basis;
use hs_lift::sobolev::load_coeff_csv;

fn hs_lift(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hs-lift"))
        .env_remove("HSLIFT_OUT_DIR")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("run hs-lift")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn expand_writes_a_loadable_csv_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = hs_lift(dir.path(), &["expand", "--fn", "psi1", "--N", "40", "--p", "2"]);
    assert_eq!(code(&o), 0);
    let path = dir.path().join("expand_psi1.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert!(lines.next().unwrap().starts_with("# hs-lift "));
    let v = load_coeff_csv(&path).unwrap();
    let direct = FunctionSpec::Psi1.coefficients(&Basis::one_dim(40), 2.0).unwrap();
    assert_eq!(v.tag(), 2.0);
    assert_eq!(v.coeffs(), direct.coeffs());
}

#[test]
fn expand_warns_below_the_monomial_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = hs_lift(dir.path(), &["expand", "--fn", "monomial(3)", "--p", "-1"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let o = hs_lift(dir.path(), &["expand", "--fn", "delta(0)", "--p", "-1", "--norms", "-1"]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(dir.path().join("expand_delta_0_norms.csv")).unwrap();
    let norm: f64 = table.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(norm.is_finite() && norm > 0.0);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&hs_lift(dir.path(), &["expand", "--fn", "psi9"])), 2);
    assert_eq!(code(&hs_lift(dir.path(), &["correspondence", "--example", "nope"])), 2);
    assert_eq!(code(&hs_lift(dir.path(), &["sde", "--dt", "-1"])), 2);
    assert_eq!(code(&hs_lift(dir.path(), &["no-such-command"])), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "colour = 3\n").unwrap();
    assert_eq!(code(&hs_lift(dir.path(), &["--config", cfg.to_str().unwrap(), "sde"])), 2);
    let cfg = dir.path().join("custom.toml");
    fs::write(&cfg, "example = \"custom\"\ncustom_sigma = [1.0]\n").unwrap();
    assert_eq!(code(&hs_lift(dir.path(), &["--config", cfg.to_str().unwrap(), "correspondence"])), 2);
}

#[test]
fn zero_custom_field_has_zero_correspondence_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    fs::write(
        &cfg,
        "example = \"custom\"\ncustom_sigma = [0.0]\ncustom_b = [0.0]\ncustom_f = [0.0]\ncustom_g = [0.0]\npaths = 3\n",
    )
    .unwrap();
    let o = hs_lift(dir.path(), &["--config", cfg.to_str().unwrap(), "correspondence"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("correspondence.csv")).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 4);
    assert!(values.iter().all(|v| *v == 0.0));
}

#[test]
fn unstable_galerkin_step_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = hs_lift(
        dir.path(),
        &["correspondence", "--paths", "2", "--dt", "0.1", "--T", "10", "--halvings", "0"],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn non_stationary_start_fails_with_one_and_still_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = hs_lift(
        dir.path(),
        &["stationarity", "--paths", "1000", "--z0", "3.0", "--no-norm-check"],
    );
    assert_eq!(code(&o), 1);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stationarity_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["pass"], false);
    assert_eq!(report["report"]["schema_version"], 1);
    assert_eq!(report["provenance"]["command"], "stationarity");
    let csv = fs::read_to_string(dir.path().join("stationarity_observables.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "t,observable,value,std_err");
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hs-lift"))
        .env("HSLIFT_OUT_DIR", dir.path())
        .args(["norms", "--fn", "psi2", "--N", "10,20"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(dir.path().join("norms_psi2.csv")).unwrap();
    assert_eq!(table.lines().count(), 2 + 2 * 4);
}

#[test]
fn selftest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = hs_lift(dir.path(), &["selftest", "--quick", "--seed", "7"]);
    let b = hs_lift(dir.path(), &["selftest", "--quick", "--seed", "7"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn translate_reports_both_routes() {
    let dir = tempfile::tempdir().unwrap();
    let o = hs_lift(dir.path(), &["translate", "--fn", "psi2", "--x", "0.5"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let diff: f64 = stdout
        .lines()
        .find(|l| l.starts_with("max |exp - quadrature|"))
        .and_then(|l| l.rsplit(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(diff < 1e-6);
    assert!(load_coeff_csv(&dir.path().join("translate_psi2.csv")).is_ok());
}
