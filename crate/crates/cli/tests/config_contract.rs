//! Configuration contract: the schema documents exactly the accepted keys,
//! validation failures exit with code 2 and outputs land where requested.

use std::collections::BTreeSet;
use std::process::Command;

use cfpeaks_cli::RunConfig;
use serde_json::Value;

fn schema() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/config.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn schema_lists_every_config_key() {
    let documented: BTreeSet<String> = schema()["properties"].as_object().unwrap().keys().cloned().collect();
    let accepted: BTreeSet<String> =
        serde_json::to_value(RunConfig::default()).unwrap().as_object().unwrap().keys().cloned().collect();
    assert_eq!(documented, accepted);
}

#[test]
fn schema_defaults_match_the_code() {
    let defaults = serde_json::to_value(RunConfig::default()).unwrap();
    for (key, spec) in schema()["properties"].as_object().unwrap() {
        if let Some(d) = spec.get("default") {
            let code = &defaults[key];
            let same = match (d.as_f64(), code.as_f64()) {
                (Some(a), Some(b)) => a == b,
                _ => d == code,
            };
            assert!(same, "{key}: schema {d} vs code {code}");
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        r#"{"beta": 2.5}"#,
        r#"{"alpha": 0}"#,
        r#"{"rho": 1.0}"#,
        r#"{"mass": -1}"#,
        r#"{"masses": [1, 0]}"#,
        r#"{"window_min": 5, "window_max": 5}"#,
        r#"{"radius": 0.5}"#,
        r#"{"theta": 2.0}"#,
        r#"{"measure_mode": "grid"}"#,
        r#"{"unknown_key": 1}"#,
        "not json",
    ] {
        assert!(RunConfig::from_json(bad).is_err(), "accepted {bad}");
    }
    assert!(RunConfig::from_json("{}").is_ok());
}

#[test]
fn binary_reports_usage_and_validation_errors() {
    let bin = env!("CARGO_BIN_EXE_cfpeaks");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"tol": -1}"#).unwrap();
    let out = Command::new(bin).args(["linear-decay", "--config"]).arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(bin).arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stationary_run_writes_its_artifacts() {
    let bin = env!("CARGO_BIN_EXE_cfpeaks");
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = Command::new(bin).args(["stationary", "--seed", "3"]).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["verdict.json", "diagnostics.json", "stationary_report.json", "profile_M1_rho0.csv"] {
        assert!(out_dir.join(file).is_file(), "missing {file}");
    }
    let verdict: Value = serde_json::from_slice(&std::fs::read(out_dir.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["seed"], 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS ")));
}
