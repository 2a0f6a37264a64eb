mod common;

use hsa_core::barriers::evaluate;
use hsa_core::harness::{run, ControllerMode, InvariantReport};

use common::variant;

#[test]
fn field_runs_are_safe_without_fallback() {
    for mode in [ControllerMode::Scf, ControllerMode::Jcf] {
        for k_v in [1.0, 2.0] {
            let sc = variant("field_2d", mode, k_v, 0.2);
            let trace = run(&sc).unwrap();
            let inv = InvariantReport::from_rows(&trace.rows, 0.2);
            assert!(inv.min_h >= 0.0, "{} {k_v}", mode.name());
            assert_eq!(inv.fallback_steps, 0);
            assert_eq!(inv.final_beta_extra, 0.0);
        }
    }
}

#[test]
fn jcf_force_opposes_velocity_where_scf_pushes_along_the_normal() {
    let sc = variant("field_2d", ControllerMode::Scf, 1.0, 0.2);
    let scf = run(&sc).unwrap();
    let jcf = run(&variant("field_2d", ControllerMode::Jcf, 1.0, 0.2)).unwrap();
    let (mut eligible, mut opposing) = (0usize, 0usize);
    for (a, b) in scf.rows.iter().zip(&jcf.rows) {
        if a.h_min > 1.0 || a.force.is_zero() {
            continue;
        }
        let g = sc
            .barriers
            .iter()
            .map(|s| evaluate(s, &a.position).unwrap())
            .min_by(|x, y| x.value.total_cmp(&y.value))
            .unwrap()
            .gradient;
        if (a.force.dot(&g) / (a.force.norm() * g.norm())).abs() < 0.99 {
            continue;
        }
        eligible += 1;
        opposing += usize::from(b.force.dot(&b.velocity) < 0.0);
    }
    assert!(eligible > 50, "{eligible}");
    assert!(opposing as f64 >= 0.3 * eligible as f64, "{opposing}/{eligible}");
}
