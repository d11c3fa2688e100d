use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

use ipc_core::constraints::{pade_approximant, pade_constraint, sector_constraint, DeltaOperator, PolynomialConstraint};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn ipc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipc")).args(args).env_remove("IPC_SOLVER_TOL").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_constraint(dir: &Path, name: &str, c: &PolynomialConstraint) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, c.to_json()).unwrap();
    p
}

fn pade_file(dir: &Path) -> PathBuf {
    let series = DeltaOperator::tanh_minus_identity().taylor(5).unwrap();
    let (num, den) = pade_approximant(&series, 3, 2).unwrap();
    let c = pade_constraint(&num.to_f64(), &den.to_f64(), 1, 0.01, 0.03, (-4.0, 4.0)).unwrap();
    write_constraint(dir, "pade.json", &c)
}

#[test]
fn malformed_json_reports_position_and_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"delta\": \"tanh\",\n  \"degree\": 4,,\n}\n").unwrap();
    let o = ipc(&["synth-constraint", s(&bad), "--out-dir", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn schema_violation_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = json(&configs().join("exp_system_sector.json"));
    cfg["unexpected"] = Value::Bool(true);
    let p = tmp.path().join("cfg.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    let o = ipc(&["roa", s(&p), "--dry-run"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("unexpected"));
}

#[test]
fn bad_tolerance_override_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_ipc"))
        .args(["roa", s(&configs().join("exp_system_sector.json")), "--dry-run"])
        .env("IPC_SOLVER_TOL", "feasibility=1e-9")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("IPC_SOLVER_TOL"));
}

#[test]
fn bundled_synthesis_is_valid_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("exp_system_pnum.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = ipc(&["synth-constraint", "--config", s(&cfg), "--out-dir", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let bytes = |d: &Path| std::fs::read(d.join("constraint.json")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));

    let o = ipc(&[
        "verify-constraint",
        s(&a.join("constraint.json")),
        "--delta",
        "exp_minus_affine",
        "--interval",
        "-4",
        "2",
        "--out-dir",
        s(&tmp.path().join("v")),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let manifest = json(&a.join("manifest.json"));
    let want = format!("{:x}", Sha256::digest(std::fs::read(&cfg).unwrap()));
    assert_eq!(manifest["config_digest"], Value::String(want));
    assert_eq!(manifest["command"], "synth-constraint");
    assert_eq!(manifest["seeds"][0], 11);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["constraint.json", "report.json"]);
    for f in outputs {
        assert_eq!(json(&a.join(f))["manifest"], "manifest.json");
    }
    assert!(manifest["finished"].as_f64().unwrap() >= manifest["started"].as_f64().unwrap());
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ipc(&["synth-constraint", s(&configs().join("triple_integrator_pnum.json")), "--seed", "3", "--out-dir", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&tmp.path().join("manifest.json"))["seeds"][0], 3);
}

#[test]
fn pade_file_verifies_on_its_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pade_file(tmp.path());
    let o = ipc(&["verify-constraint", s(&p), "--delta", "tanh_minus_identity", "--interval", "-4", "4", "--out-dir", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(json(&tmp.path().join("out/report.json"))["ok"].as_bool().unwrap());
}

#[test]
fn narrow_sector_fails_on_tanh() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_constraint(tmp.path(), "sector.json", &sector_constraint(0.9, 1.0).unwrap());
    let out = tmp.path().join("out");
    let o = ipc(&["verify-constraint", s(&p), "--delta", "tanh", "--interval", "-5", "5", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("violation at v"));
    let csv = std::fs::read_to_string(out.join("violations.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    // tanh(v) < 0.9 v for every v beyond the small-slope crossing, on both sides.
    let vs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(vs.iter().any(|&v| v < -1.0) && vs.iter().any(|&v| v > 1.0));
}

#[test]
fn empty_interval_is_vacuous() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_constraint(tmp.path(), "sector.json", &sector_constraint(0.9, 1.0).unwrap());
    let o = ipc(&["verify-constraint", s(&p), "--delta", "tanh", "--interval", "3", "3", "--out-dir", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn verify_config_form() {
    let tmp = tempfile::tempdir().unwrap();
    pade_file(tmp.path());
    let cfg = tmp.path().join("verify.json");
    std::fs::write(&cfg, r#"{ "constraint": "pade.json", "delta": "tanh_minus_identity", "interval": [-4, 4] }"#).unwrap();
    let o = ipc(&["verify-constraint", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn linear_map_flags_give_unit_sector() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ipc(&[
        "transform", "--h", "1,-0.5,1,-1.5", "--m", "1,0,0,-1", "--delta", "tanh", "--interval", "-10", "10", "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = json(&tmp.path().join("constraint.json"));
    assert_eq!(out["matrix"], serde_json::json!([[0.0, 1.0], [1.0, -2.0]]));
    assert_eq!(out["provenance"], "transformed");
    assert!(out["verify"]["ok"].as_bool().unwrap());
    let csv = std::fs::read_to_string(tmp.path().join("tilde_delta.csv")).unwrap();
    // ṽ = v − tanh(v)/2, w̃ = v − 3 tanh(v)/2 at v = −10.
    let first: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let t = 10f64.tanh();
    assert!((first[0] - (-10.0 + 0.5 * t)).abs() < 1e-12);
    assert!((first[1] - (-10.0 + 1.5 * t)).abs() < 1e-12);
}

#[test]
fn bundled_transform_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ipc(&["transform", "--config", s(&configs().join("tanh_unit_sector_transform.json")), "--out-dir", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("matrix = [[0, 1], [1, -2]]"));
}

#[test]
fn identity_map_keeps_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    let input = pade_file(tmp.path());
    let o = ipc(&["transform", "--constraint", s(&input), "--out-dir", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let before = PolynomialConstraint::from_json(&std::fs::read_to_string(&input).unwrap()).unwrap();
    let after = PolynomialConstraint::from_json(&std::fs::read_to_string(tmp.path().join("out/constraint.json")).unwrap()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn non_invertible_h1_exits_1_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    // d/dv (v − 2 tanh v) = 1 − 2 sech² v changes sign at v = ±0.88.
    let o = ipc(&[
        "transform", "--h1", "v - 2*w", "--psi", "w^2", "--delta", "tanh", "--interval", "-3", "3", "--out-dir", s(&out),
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("not invertible") && err.contains("ranges over"), "{err}");
    assert!(!out.exists());
}

#[test]
fn dry_run_prints_census_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = ipc(&["roa", s(&configs().join("triple_integrator_sector.json")), "--dry-run", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("constraint roa") && text.contains("decision s_c"), "{text}");
    assert!(text.contains("solver not run"));
    assert!(!out.exists());
}

fn small_exp_config(dir: &Path) -> PathBuf {
    let mut cfg = json(&configs().join("exp_system_sector.json"));
    cfg["roa"]["schedule"] = serde_json::json!([{ "n_v": 2, "n_total": 6, "iterations": 2 }]);
    cfg["plots"] = serde_json::json!({ "trajectories": 2, "contour_bins": 36 });
    let p = dir.join("small.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn roa_run_writes_certificate_and_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_exp_config(tmp.path());
    let out = tmp.path().join("out");
    let o = ipc(&["roa", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cert = json(&out.join("certificate.json"));
    assert!(cert["volume"]["value"].as_f64().unwrap() > 0.0);
    assert!(cert["checks"].as_array().unwrap().iter().all(|c| c["ok"].as_bool().unwrap()));
    let fal = json(&out.join("falsify.json"));
    assert_eq!(fal["samples"], 100);
    assert!(fal["failures"].as_array().unwrap().is_empty());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("constraints,volume,relative,seconds\nsector,"));
    assert!(std::fs::read_to_string(out.join("contour_x1_x2.csv")).unwrap().lines().count() > 30);
    assert!(out.join("trajectory_1.csv").exists());
    let manifest = json(&out.join("manifest.json"));
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists());
    }
    // No temporaries left behind by write-then-rename.
    assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn roa_failure_exits_3_and_saves_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("unstable.json");
    std::fs::write(
        &cfg,
        r#"{
  "name": "unstable",
  "model": { "name": "unstable", "states": ["x"], "f": ["x + w"], "g": ["x"], "delta": ["tanh"] },
  "constraints": [{ "name": "sector", "kind": "sector", "alpha": 0.0, "beta": 1.0, "interval": [-1, 1] }],
  "v0": { "kind": "polynomial", "text": "x^2" },
  "roa": { "schedule": [{ "n_v": 2, "n_total": 4, "iterations": 1 }] }
}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = ipc(&["roa", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let last = json(&out.join("last_feasible.json"));
    assert!(last["error"].as_str().unwrap().contains("no certifiable"));
    assert!(!out.join("certificate.json").exists());
}
