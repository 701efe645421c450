//! Acceptance: repeated full pipeline runs produce byte-identical
//! deterministic artifacts regardless of the worker thread count.
//!
//! `run_report.json` carries wall-clock timings and is exempt; every
//! other artifact (CSV series, check reports, singular set, field dump)
//! must match bit for bit.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn run(config: &str, out: &Path, threads: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_parobs"))
        .args(["all", "--config", config, "--threads", threads, "--out"])
        .arg(out)
        .current_dir(env!("CARGO_MANIFEST_DIR").to_string() + "/../..")
        .status()
        .unwrap();
    assert!(status.success(), "pipeline run failed");
}

fn deterministic_artifacts(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| n != "run_report.json")
        .collect();
    names.sort();
    names
}

#[test]
fn criterion_10_determinism() {
    let started = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let dirs = [
        root.path().join("t1_a"),
        root.path().join("t1_b"),
        root.path().join("t8"),
    ];
    run("configs/pinch_1d.json", &dirs[0], "1");
    run("configs/pinch_1d.json", &dirs[1], "1");
    run("configs/pinch_1d.json", &dirs[2], "8");

    let names = deterministic_artifacts(&dirs[0]);
    assert!(
        names.iter().any(|n| n.ends_with(".csv")),
        "expected CSV artifacts, found {names:?}"
    );
    for other in &dirs[1..] {
        assert_eq!(
            names,
            deterministic_artifacts(other),
            "artifact sets differ"
        );
        for name in &names {
            let a = std::fs::read(dirs[0].join(name)).unwrap();
            let b = std::fs::read(other.join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between runs");
        }
    }
    let elapsed = started.elapsed();
    println!("ACCEPTANCE 10 determinism: PASS ({elapsed:.2?})");
}
