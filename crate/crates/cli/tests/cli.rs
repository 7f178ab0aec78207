use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gtlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtlab")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = gtlab(&["study", "--config", "/nonexistent/study.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"kind": "gap", "eps": [0.01], "tolerance": {}}"#).unwrap();
    let out = tmp.path().join("run");
    let o = gtlab(&["study", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`tolerance`"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_flags_are_rejected() {
    let o = gtlab(&["gap", "--eps", "0.005,0.01"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`eps`"));
    let o = gtlab(&["solve-ch", "--seed-geometry", "square:0.2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = gtlab(&["solve-ch", "--eps", "0.04", "--grid-k", "2"]);
    assert!(stderr(&o).contains("`grid_k`"));
    let o = gtlab(&["gap", "--config", &config("profile.json")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn profile_writes_table_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gtlab(&["profile", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::File::open(tmp.path().join("profile.bin")).unwrap();
    let t = gtlab_core::potential::ProfileTable::read_from(table).unwrap();
    assert!((t.phi0(0.0)).abs() < 1e-12);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["kind"], "profile");
}

#[test]
fn study_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gtlab(&["study", "--config", &config("ch_planar.json"), "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("u_eps0.04.bin").exists());
    assert!(tmp.path().join("rows.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS planar-lambda"));
}

#[test]
fn seed_geometry_selects_the_study() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gtlab(&["solve-ok", "--eps", "0.02", "--seed-geometry", "lamellar:0.4", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(tmp.path().join("report.json")).unwrap();
    assert!(report.contains("\"kind\": \"ok-lamellar\""));
    assert!(tmp.path().join("v_eps0.02.bin").exists());
}

#[test]
fn failing_rule_gives_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("gap.json");
    fs::write(&path, r#"{"kind": "gap", "eps": [0.01], "tolerances": {"gap_range": [0.2, 0.3]}}"#).unwrap();
    let o = gtlab(&["study", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL gap-lower"));
}
