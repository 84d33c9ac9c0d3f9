use std::path::Path;
use std::process::{Command, Output};

fn mss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mss"))
        .args(args)
        .env_remove("MSS_JOBS")
        .output()
        .expect("mss runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_sim(dir: &Path, body: &str) -> String {
    let p = dir.join("sim.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero() {
    let o = mss(&["scan", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let o = mss(&["scan", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--frobnicate"));
}

#[test]
fn missing_files_are_named() {
    let o = mss(&["scan", "--tensor", "no/such.msst"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no/such.msst"));

    let o = mss(&["detect", "--manifest", "absent.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn inconsistent_geometry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_sim(dir.path(), r#"{"d": 1, "L": 16, "n": 2, "hypothesis": {"type": "H0"}}"#);
    let out = dir.path().join("data");
    let o = mss(&["gen", "--sim", &sim, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let spec = dir.path().join("net.json");
    std::fs::write(&spec, r#"{"L": 32, "d": 1, "epsilon": 0.5}"#).unwrap();
    let manifest = out.join("manifest.json");
    let o = mss(&[
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--net",
        spec.to_str().unwrap(),
        "--K",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("net.json"), "{}", stderr(&o));
}

#[test]
fn gen_writes_a_manifest_and_detect_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_sim(
        dir.path(),
        r#"{"d": 1, "L": 16, "n": 3, "seed": 2,
            "hypothesis": {"type": "H1", "pattern": "quadratic-bump", "amplitude": {"mu": 10.0},
                           "scale_law": {"type": "fixed", "h": [2.0]}}}"#,
    );
    let out = dir.path().join("data");
    let o = mss(&["gen", "--sim", &sim, "--out", out.to_str().unwrap(), "--deterministic"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..3 {
        assert!(out.join(format!("tensor_{i:03}.msst")).exists());
    }
    let manifest = out.join("manifest.json");
    let o = mss(&["learn", "--manifest", manifest.to_str().unwrap(), "--K", "1", "--deterministic"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["best_pattern"], "quadratic-bump");
    assert_eq!(report["estimates"].as_array().unwrap().len(), 3);
    assert!(report.get("generated_at").is_none());
}

#[test]
fn reports_carry_a_timestamp_unless_deterministic() {
    let o = mss(&["diagnose-tails", "--N", "100", "--reps", "10000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["generated_at"].is_u64());
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = mss(&["net", "--L", "16", "--d", "1", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
