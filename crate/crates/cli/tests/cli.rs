use std::path::PathBuf;
use std::process::Command;

fn hsa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsa"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"))
}

fn json(out: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout))
    })
}

#[test]
fn run_writes_trace_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("wall.csv");
    let out = hsa()
        .args(["run", scenario("wall_1d").to_str().unwrap(), "--out"])
        .arg(&trace)
        .args(["--mode", "jcf", "--set", "k_v=5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["mode"], "jcf");
    assert!(report["invariants"]["min_h"].as_f64().unwrap() >= -1e-3);
    assert!(trace.exists());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("wall.csv.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["scenario"]["stability"]["k_v"], 5.0);
}

#[test]
fn compare_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, mode) in [(&a, "scf"), (&b, "scf_passivity")] {
        let st = hsa()
            .args(["run", scenario("wall_1d").to_str().unwrap(), "--mode", mode, "--out"])
            .arg(path)
            .output()
            .unwrap()
            .status;
        assert!(st.success());
    }
    let out = hsa().arg("compare").arg(&a).arg(&b).output().unwrap();
    assert!(out.status.success());
    let rep = json(&out);
    assert!(rep["a"]["force_integral"].as_f64().unwrap() > rep["b"]["force_integral"].as_f64().unwrap());
}

#[test]
fn sweep_writes_one_trace_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsa()
        .args(["sweep", scenario("wall_1d").to_str().unwrap(), "--param", "e_max=0,0.2", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&out);
    let peaks: Vec<f64> = rep
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["summary"]["max_force"].as_f64().unwrap())
        .collect();
    assert!(peaks[1] > peaks[0]);
    assert!(dir.path().join("wall_1d_e_max_0.2.csv").exists());
}

#[test]
fn oracle_check_passes() {
    let out = hsa()
        .args(["oracle-check", "--n", "40", "--seed", "7", "--qp-n", "100"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&out)["passed"], true);
}

#[test]
fn bad_input_exits_with_usage_code() {
    let out = hsa().args(["run", "/nonexistent.toml", "--out", "/tmp/x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = hsa()
        .args(["sweep", scenario("wall_1d").to_str().unwrap(), "--param", "k_v=-1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}
