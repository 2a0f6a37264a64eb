mod common;

use hsa_core::harness::trace::meta_path;
use hsa_core::harness::{compare, read_trace_csv, run, write_trace, ControllerMode, TraceMeta};

use common::{scenario, variant};

#[test]
fn trace_files_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["wall_1d", "operator_oscillation", "field_2d"] {
        let sc = scenario(name);
        let a = dir.path().join(format!("{name}_a.csv"));
        let b = dir.path().join(format!("{name}_b.csv"));
        write_trace(&a, &run(&sc).unwrap()).unwrap();
        write_trace(&b, &run(&sc).unwrap()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{name}");
        assert_eq!(
            std::fs::read(meta_path(&a)).unwrap(),
            std::fs::read(meta_path(&b)).unwrap()
        );
    }
}

#[test]
fn written_trace_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("field_2d");
    let trace = run(&sc).unwrap();
    let path = dir.path().join("field.csv");
    write_trace(&path, &trace).unwrap();
    let rows = read_trace_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), trace.rows.len());
    for (a, b) in rows.iter().zip(&trace.rows) {
        assert_eq!(a.active_case, b.active_case);
        assert!(a.position.distance(&b.position) <= 1e-7 * (1.0 + b.position.norm()));
    }
    let meta: TraceMeta =
        serde_json::from_str(&std::fs::read_to_string(meta_path(&path)).unwrap()).unwrap();
    assert_eq!(meta.steps, trace.rows.len());
    assert_eq!(meta.scenario.barriers.len(), 3);
}

#[test]
fn compare_reports_controller_differences() {
    let scf = run(&variant("field_2d", ControllerMode::Scf, 1.0, 0.2)).unwrap();
    let jcf = run(&variant("field_2d", ControllerMode::Jcf, 1.0, 0.2)).unwrap();
    let rep = compare(&scf.rows, &jcf.rows).unwrap();
    assert!(rep.max_position_deviation > 0.0);
    assert!(rep.b.mean_control_deviation >= rep.a.mean_control_deviation);
    let wall = run(&scenario("wall_1d")).unwrap();
    assert!(compare(&scf.rows, &wall.rows).is_err());
}
