use std::f64::consts::PI;
use std::sync::Arc;
use vpsfem::analysis::{run_convergence_study, StudyConfig};
use vpsfem::fem::{project, FnField, ProjectionKind};
use vpsfem::model::CoefficientFamily;
use vpsfem::stepper::NewtonConfig;

#[test]
#[ignore]
fn probe_convergence_rates() {
    let coeffs = CoefficientFamily::experiment1().build();
    let study = StudyConfig {
        final_time: 2.0,
        k_min: 1,
        k_max: 4,
        newton: NewtonConfig::default(),
    };
    let report = run_convergence_study(
        &coeffs,
        &study,
        |space| {
            let phi0 = project(space, ProjectionKind::H1, &FnField {
                value: |x: f64, y: f64| 0.25 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos() + 0.5,
                gradient: |x: f64, y: f64| {
                    let k = 2.0 * PI;
                    [-0.25 * k * (k * x).sin() * (k * y).cos(),
                     -0.25 * k * (k * x).cos() * (k * y).sin()]
                },
            })?;
            let q0 = project(space, ProjectionKind::L2, &FnField {
                value: |x: f64, y: f64| 0.01 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
                gradient: |x: f64, y: f64| {
                    let k = 2.0 * PI;
                    [0.01 * k * (k * x).cos() * (k * y).sin(),
                     0.01 * k * (k * x).sin() * (k * y).cos()]
                },
            })?;
            Ok((phi0, q0))
        },
        |k, traj| {
            let d = traj.diagnostics.last().unwrap();
            eprintln!("level {k} done: E(T) = {:.6}, mass = {:.9}", d.energy, d.mass);
        },
    )
    .unwrap();
    eprintln!("{}", report.render_text());
}
