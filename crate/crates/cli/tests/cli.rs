//! End-to-end checks of the config surface and the pipeline binary.

use parobs_cli::config::{parse_config, ScenarioConfig};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parobs"))
}

#[test]
fn minimal_flat_document_is_valid() {
    let doc = r#"{
        "scenario": {
            "dim": 1, "L": 1.0, "h": 0.0625, "t_range": [0.0, 0.0625],
            "f": {"kind": "constant", "value": 1.0},
            "initial": {"kind": "zero"},
            "boundary": {"kind": "fixed", "data": {"kind": "zero"}}
        },
        "output_dir": "out"
    }"#;
    let config = parse_config(doc).unwrap();
    let scenario = config.scenario.resolve(None).unwrap();
    // dt defaults to h^2
    assert_eq!(scenario.grid.dt, 0.0625 * 0.0625);
    assert_eq!(config.output_dir, "out");
}

#[test]
fn negative_source_is_rejected() {
    let doc = r#"{
        "scenario": {
            "dim": 1, "L": 1.0, "h": 0.0625, "t_range": [0.0, 0.0625],
            "f": {"kind": "constant", "value": -1.0},
            "initial": {"kind": "zero"},
            "boundary": {"kind": "fixed", "data": {"kind": "zero"}}
        }
    }"#;
    let err = parse_config(doc).unwrap_err();
    assert!(format!("{err:#}").contains("positive"), "{err:#}");
}

#[test]
fn schema_error_names_the_path() {
    let err = parse_config(r#"{"pipeline": []}"#).unwrap_err();
    assert!(format!("{err:#}").contains("/scenario"), "{err:#}");
}

#[test]
fn pipeline_dependency_validation() {
    let doc = r#"{
        "scenario": {"builtin": "flat", "h": 0.0625},
        "pipeline": [ {"stage": "checks"} ]
    }"#;
    let err = parse_config(doc).unwrap_err();
    assert!(format!("{err:#}").contains("trace"), "{err:#}");
}

#[test]
fn builtin_resolution_override() {
    let cfg: ScenarioConfig =
        serde_json::from_str(r#"{"builtin": "pinch-1d", "h": 0.03125}"#).unwrap();
    let a = cfg.resolve(None).unwrap();
    assert_eq!(a.grid.h, 0.03125);
    let b = cfg.resolve(Some(0.015625)).unwrap();
    assert_eq!(b.grid.h, 0.015625);
}

#[test]
fn flat_run_exits_zero_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["all", "--config", "configs/flat.json", "--out"])
        .arg(dir.path())
        .current_dir(env!("CARGO_MANIFEST_DIR").to_string() + "/../..")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["solve.json", "singular.json", "index.json", "run_report.json"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    // manifest lengths hold
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_report.json")).unwrap())
            .unwrap();
    for entry in report["manifest"].as_array().unwrap() {
        let path = dir.path().join(entry["path"].as_str().unwrap());
        let bytes = std::fs::metadata(&path).unwrap().len();
        assert_eq!(bytes, entry["bytes"].as_u64().unwrap(), "{path:?}");
    }
}

#[test]
fn wave_run_reports_empty_singular_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "dimension",
            "--config",
            "configs/wave_1d.json",
            "--resolution",
            "0.015625",
            "--out",
        ])
        .arg(dir.path())
        .current_dir(env!("CARGO_MANIFEST_DIR").to_string() + "/../..")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["classified"]["singular"], 0);
    assert!(report["classified"]["regular"].as_u64().unwrap() > 0);
    // dimension stage skipped with a notice
    assert!(report["notices"]
        .as_array()
        .unwrap()
        .iter()
        .any(|n| n.as_str().unwrap().contains("dimension")));
}

#[test]
fn missing_config_is_a_hard_error() {
    let out = bin().args(["solve"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
