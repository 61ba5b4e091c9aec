//! Core kernel benchmarks: Gram-matrix assembly, slab-system assembly,
//! sparse factorization, and a full implicit step.

use std::f64::consts::PI;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use vpsfem::fem::solver::DirectSolver;
use vpsfem::fem::{assemble_matrix, project, FESpace, FnField, MatrixKind, ProjectionKind};
use vpsfem::mesh::build_periodic_unit_square_mesh;
use vpsfem::model::CoefficientFamily;
use vpsfem::stepper::{assemble_step_system, solve_time_step, NewtonConfig};

fn space(n: usize) -> Arc<FESpace> {
    FESpace::new(Arc::new(build_periodic_unit_square_mesh(n).unwrap()))
}

fn smooth_fields(
    s: &Arc<FESpace>,
) -> (vpsfem::fem::FEFunction, vpsfem::fem::FEFunction) {
    let phi0 = project(
        s,
        ProjectionKind::H1,
        &FnField {
            value: |x: f64, y: f64| 0.25 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos() + 0.5,
            gradient: |x: f64, y: f64| {
                let k = 2.0 * PI;
                [
                    -0.25 * k * (k * x).sin() * (k * y).cos(),
                    -0.25 * k * (k * x).cos() * (k * y).sin(),
                ]
            },
        },
    )
    .unwrap();
    let q0 = vpsfem::fem::FEFunction::zeros(Arc::clone(s));
    (phi0, q0)
}

fn bench_assembly(c: &mut Criterion) {
    let s = space(32);
    c.bench_function("mass_matrix_n32", |b| {
        b.iter(|| assemble_matrix(&s, MatrixKind::Mass))
    });
    c.bench_function("stiffness_matrix_n32", |b| {
        b.iter(|| assemble_matrix(&s, MatrixKind::Stiffness))
    });
}

fn bench_step_system(c: &mut Criterion) {
    let s = space(16);
    let coeffs = CoefficientFamily::experiment1().build();
    let (phi0, q0) = smooth_fields(&s);
    let m = s.dof_count;
    let mut x = Vec::with_capacity(3 * m);
    x.extend_from_slice(&phi0.coefficients);
    x.extend(std::iter::repeat_n(0.0, m));
    x.extend_from_slice(&q0.coefficients);

    c.bench_function("step_system_assembly_n16", |b| {
        b.iter(|| assemble_step_system(&s, &coeffs, &x, &phi0, &q0, 1e-3).unwrap())
    });

    let (_, jac) = assemble_step_system(&s, &coeffs, &x, &phi0, &q0, 1e-3).unwrap();
    c.bench_function("jacobian_lu_n16", |b| {
        b.iter(|| {
            let mut solver = DirectSolver::new(&jac).unwrap();
            solver.factorize(&jac).unwrap()
        })
    });
}

fn bench_time_step(c: &mut Criterion) {
    let s = space(16);
    let coeffs = CoefficientFamily::experiment1().build();
    let (phi0, q0) = smooth_fields(&s);
    let cfg = NewtonConfig::default();
    c.bench_function("implicit_step_n16_tau1e-3", |b| {
        b.iter(|| solve_time_step(&s, &coeffs, &phi0, &q0, 1e-3, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_assembly, bench_step_system, bench_time_step);
criterion_main!(benches);
