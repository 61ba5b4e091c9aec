//! Error measurement between trajectories on consecutively refined
//! space-time grids, experimental orders of convergence, and structure
//! verification, mirroring the norms of the error analysis:
//! squared L-infinity(H1) for phi, squared L-infinity(L2) for q, and squared
//! L2(H1) for the piecewise-constant chemical potential and the slab averages
//! of q.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{functional, h1_norm_squared, prolong, FEFunction, FESpace, FunctionalKind};
use crate::model::{dissipation, energy, ModelCoefficients};
use crate::stepper::{run_simulation, NewtonConfig, TimeGrid, Trajectory};

/// Squared error components between two consecutively refined trajectories.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorComponents {
    /// max over time nodes of ||phi_c - phi_f||_{H1}^2
    pub e_phi: f64,
    /// max over time nodes of ||q_c - q_f||_{L2}^2
    pub e_q: f64,
    /// integral over time of ||mu_bar_c - mu_bar_f||_{H1}^2
    pub e_mu_bar: f64,
    /// integral over time of ||q_bar_c - q_bar_f||_{H1}^2
    pub e_q_bar: f64,
}

impl ErrorComponents {
    pub fn total(&self) -> f64 {
        self.e_phi + self.e_q + self.e_mu_bar + self.e_q_bar
    }
}

/// Compares a trajectory with the one computed on the red-refined mesh with
/// half the time step. The coarse piecewise-linear-in-time fields are
/// evaluated at the fine time nodes and prolonged in space (exact, nested
/// spaces); the piecewise-constant comparisons integrate exactly in time.
pub fn compare_trajectories(coarse: &Trajectory, fine: &Trajectory) -> Result<ErrorComponents> {
    if fine.grid.steps != 2 * coarse.grid.steps
        || (fine.grid.final_time - coarse.grid.final_time).abs()
            > 1e-12 * coarse.grid.final_time.abs()
    {
        return Err(Error::GridMismatch(format!(
            "expected twice the steps over the same interval, got {}/{} steps on [0, {}]/[0, {}]",
            coarse.grid.steps, fine.grid.steps, coarse.grid.final_time, fine.grid.final_time
        )));
    }
    let refinement_ok = fine
        .space
        .mesh
        .refinement
        .as_ref()
        .is_some_and(|info| Arc::ptr_eq(&info.parent, &coarse.space.mesh));
    if !refinement_ok {
        return Err(Error::NotRefinementPair);
    }

    let fine_space = &fine.space;
    let nc = coarse.grid.steps;
    let tau_f = fine.grid.tau();

    // Spatial prolongation of all coarse node fields and slab potentials.
    let phi_c: Vec<FEFunction> = coarse
        .phi_nodes
        .iter()
        .map(|f| prolong(f, fine_space))
        .collect::<Result<_>>()?;
    let q_c: Vec<FEFunction> = coarse
        .q_nodes
        .iter()
        .map(|f| prolong(f, fine_space))
        .collect::<Result<_>>()?;
    let mu_c: Vec<FEFunction> = coarse
        .mu_slabs
        .iter()
        .map(|f| prolong(f, fine_space))
        .collect::<Result<_>>()?;

    // L-infinity-in-time components over the fine trajectory's nodes; the
    // coarse piecewise-linear fields interpolate to nodal averages at odd
    // fine nodes.
    let mut e_phi = 0.0f64;
    let mut e_q = 0.0f64;
    for m in 0..=2 * nc {
        let (phi_cm, q_cm) = if m % 2 == 0 {
            (phi_c[m / 2].clone(), q_c[m / 2].clone())
        } else {
            (
                phi_c[m / 2].midpoint(&phi_c[m / 2 + 1]),
                q_c[m / 2].midpoint(&q_c[m / 2 + 1]),
            )
        };
        let dphi = phi_cm.diff(&fine.phi_nodes[m]);
        let dq = q_cm.diff(&fine.q_nodes[m]);
        e_phi = e_phi.max(h1_norm_squared(fine_space, &dphi));
        let l2 = functional(fine_space, FunctionalKind::L2Norm, &dq);
        e_q = e_q.max(l2 * l2);
    }

    // Exact slab integrals of the piecewise-constant differences: a coarse
    // slab covers two fine sub-slabs.
    let mut e_mu_bar = 0.0f64;
    let mut e_q_bar = 0.0f64;
    for mf in 0..2 * nc {
        let kc = mf / 2;
        let dmu = mu_c[kc].diff(&fine.mu_slabs[mf]);
        e_mu_bar += tau_f * h1_norm_squared(fine_space, &dmu);

        let qbar_c = q_c[kc].midpoint(&q_c[kc + 1]);
        let qbar_f = fine.q_nodes[mf].midpoint(&fine.q_nodes[mf + 1]);
        let dqb = qbar_c.diff(&qbar_f);
        e_q_bar += tau_f * h1_norm_squared(fine_space, &dqb);
    }

    Ok(ErrorComponents {
        e_phi,
        e_q,
        e_mu_bar,
        e_q_bar,
    })
}

/// Experimental orders of convergence of a positive error sequence:
/// `rate_k = log2(e_{k-1} / e_k)`, one entry per refinement.
pub fn eoc(errors: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "orders of convergence need strictly positive errors, got {bad}"
        )));
    }
    Ok(errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect())
}

/// Structure verification of a trajectory: mass drift, energy-identity
/// defect, and energy monotonicity, all recomputed from the stored fields.
#[derive(Clone, Debug)]
pub struct StructureReport {
    pub max_mass_drift: f64,
    pub mass_threshold: f64,
    pub max_identity_residual: f64,
    pub identity_threshold: f64,
    pub monotonicity_violations: usize,
    pub steps: usize,
}

impl StructureReport {
    pub fn pass(&self) -> bool {
        self.max_mass_drift <= self.mass_threshold
            && self.max_identity_residual <= self.identity_threshold
            && self.monotonicity_violations == 0
    }
}

impl std::fmt::Display for StructureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "mass drift          {:.3e} (threshold {:.3e})",
            self.max_mass_drift, self.mass_threshold
        )?;
        writeln!(
            f,
            "identity residual   {:.3e} (threshold {:.3e})",
            self.max_identity_residual, self.identity_threshold
        )?;
        writeln!(
            f,
            "monotonicity breaks {} of {} steps",
            self.monotonicity_violations, self.steps
        )?;
        writeln!(f, "structure {}", if self.pass() { "PASS" } else { "FAIL" })
    }
}

/// Recomputes mass, energy, and per-slab dissipation from the trajectory
/// fields and checks them against the stepper's structural guarantees.
pub fn structure_report(traj: &Trajectory) -> StructureReport {
    let space = &traj.space;
    let coeffs = &traj.coeffs;
    let tau = traj.grid.tau();
    let n = traj.grid.steps;

    let mass0 = functional(space, FunctionalKind::Integral, &traj.phi_nodes[0]);
    let e0 = energy(space, &traj.phi_nodes[0], &traj.q_nodes[0], coeffs);

    let mut max_drift = 0.0f64;
    let mut max_identity = 0.0f64;
    let mut violations = 0usize;
    let mut e_prev = e0;
    for k in 1..=n {
        let mass_k = functional(space, FunctionalKind::Integral, &traj.phi_nodes[k]);
        max_drift = max_drift.max((mass_k - mass0).abs());

        let e_k = energy(space, &traj.phi_nodes[k], &traj.q_nodes[k], coeffs);
        let diss = dissipation(
            space,
            &traj.phi_bar(k - 1),
            &traj.mu_slabs[k - 1],
            &traj.q_bar(k - 1),
            coeffs,
        );
        max_identity = max_identity.max((e_k - e_prev + tau * diss).abs());
        if e_k > e_prev + 1e-10 {
            violations += 1;
        }
        e_prev = e_k;
    }

    StructureReport {
        max_mass_drift: max_drift,
        mass_threshold: 1e-10 * (1.0 + mass0.abs()),
        max_identity_residual: max_identity,
        identity_threshold: 1e-8 * (1.0 + e0.abs()),
        monotonicity_violations: violations,
        steps: n,
    }
}

/// One row of a convergence study: refinement level k runs on the mesh with
/// `2^(1+k)` cells per axis and time step `2^-(1+k)`, and its error is
/// measured against the next-finer level.
#[derive(Clone, Debug)]
pub struct ConvergenceLevel {
    pub level: usize,
    pub n: usize,
    pub tau: f64,
    pub errors: ErrorComponents,
}

/// Errors and experimental orders of convergence over a ladder of refinement
/// levels.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
}

impl ConvergenceReport {
    pub fn totals(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.errors.total()).collect()
    }

    pub fn eoc_total(&self) -> Result<Vec<f64>> {
        eoc(&self.totals())
    }

    fn component_columns(&self) -> [(&'static str, Vec<f64>); 5] {
        [
            ("e_total", self.totals()),
            ("e_phi", self.levels.iter().map(|l| l.errors.e_phi).collect()),
            ("e_q", self.levels.iter().map(|l| l.errors.e_q).collect()),
            (
                "e_mu_bar",
                self.levels.iter().map(|l| l.errors.e_mu_bar).collect(),
            ),
            (
                "e_q_bar",
                self.levels.iter().map(|l| l.errors.e_q_bar).collect(),
            ),
        ]
    }

    /// Aligned text table with one error/eoc column pair per component.
    pub fn render_text(&self) -> String {
        let cols = self.component_columns();
        let mut out = String::new();
        out.push_str(&format!("{:>2} {:>5} {:>10}", "k", "n", "tau"));
        for (name, _) in &cols {
            out.push_str(&format!(" {:>10} {:>6}", name, "eoc"));
        }
        out.push('\n');
        for (i, lvl) in self.levels.iter().enumerate() {
            out.push_str(&format!("{:>2} {:>5} {:>10.6}", lvl.level, lvl.n, lvl.tau));
            for (_, vals) in &cols {
                let rate = if i > 0 && vals[i - 1] > 0.0 && vals[i] > 0.0 {
                    format!("{:6.2}", (vals[i - 1] / vals[i]).log2())
                } else {
                    format!("{:>6}", "---")
                };
                out.push_str(&format!(" {:>10.3e} {rate}", vals[i]));
            }
            out.push('\n');
        }
        out
    }

    /// CSV mirror of the table (empty eoc cells on the first row).
    pub fn render_csv(&self) -> String {
        let cols = self.component_columns();
        let mut out = String::from("k,n,tau");
        for (name, _) in &cols {
            out.push_str(&format!(",{name},eoc_{name}"));
        }
        out.push('\n');
        for (i, lvl) in self.levels.iter().enumerate() {
            out.push_str(&format!("{},{},{:.16e}", lvl.level, lvl.n, lvl.tau));
            for (_, vals) in &cols {
                let rate = if i > 0 && vals[i - 1] > 0.0 && vals[i] > 0.0 {
                    format!("{:.16e}", (vals[i - 1] / vals[i]).log2())
                } else {
                    String::new()
                };
                out.push_str(&format!(",{:.16e},{rate}", vals[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Settings of a convergence study over levels `k_min ..= k_max`, each
/// compared against the next-finer level (so level `k_max + 1` is also run).
#[derive(Clone, Copy, Debug)]
pub struct StudyConfig {
    pub final_time: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub newton: NewtonConfig,
}

/// Runs the refinement ladder with the space-time coupling tau_k = h_k.
/// Meshes are built by red refinement from the coarsest level so all levels
/// are nested; `initial_data` produces the projected initial fields on each
/// level's space.
pub fn run_convergence_study(
    coeffs: &ModelCoefficients,
    study: &StudyConfig,
    mut initial_data: impl FnMut(&Arc<FESpace>) -> Result<(FEFunction, FEFunction)>,
    mut on_level: impl FnMut(usize, &Trajectory),
) -> Result<ConvergenceReport> {
    if study.k_max < study.k_min {
        return Err(Error::InvalidInput(
            "k_max must be at least k_min".to_string(),
        ));
    }
    let n_min = 1usize << (1 + study.k_min);
    if n_min < 4 {
        return Err(Error::InvalidInput(format!(
            "level {} uses n = {}, below the minimum periodic resolution; start at level 1",
            study.k_min, n_min
        )));
    }

    let mut mesh = Arc::new(crate::mesh::build_periodic_unit_square_mesh(n_min)?);
    let mut levels = Vec::new();
    let mut previous: Option<Trajectory> = None;

    for k in study.k_min..=study.k_max + 1 {
        let tau = 0.5f64.powi(1 + k as i32);
        let steps_f = study.final_time / tau;
        let steps = steps_f.round() as usize;
        if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "final time {} is not a multiple of tau = {tau}",
                study.final_time
            )));
        }
        let space = FESpace::new(Arc::clone(&mesh));
        let (phi0, q0) = initial_data(&space)?;
        let grid = TimeGrid::new(study.final_time, steps)?;
        let traj = run_simulation(&space, coeffs, grid, phi0, q0, &study.newton)?;
        on_level(k, &traj);

        if let Some(prev) = previous.take() {
            let errors = compare_trajectories(&prev, &traj)?;
            levels.push(ConvergenceLevel {
                level: k - 1,
                n: prev.space.mesh.n,
                tau: prev.grid.tau(),
                errors,
            });
        }
        previous = Some(traj);
        if k <= study.k_max {
            mesh = Arc::new(crate::mesh::refine_uniform(&mesh));
        }
    }

    Ok(ConvergenceReport { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{project, FnField, ProjectionKind};
    use crate::mesh::{build_periodic_unit_square_mesh, refine_uniform};
    use crate::model::CoefficientFamily;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn small_trajectory(n: usize, steps: usize) -> Trajectory {
        let space = FESpace::new(Arc::new(build_periodic_unit_square_mesh(n).unwrap()));
        let coeffs = CoefficientFamily::experiment1().build();
        let phi0 = project(
            &space,
            ProjectionKind::H1,
            &FnField {
                value: |x: f64, y: f64| {
                    0.25 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos() + 0.5
                },
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
        let q0 = FEFunction::zeros(Arc::clone(&space));
        let grid = TimeGrid::new(0.02 * steps as f64, steps).unwrap();
        run_simulation(&space, &coeffs, grid, phi0, q0, &NewtonConfig::default()).unwrap()
    }

    /// Space-time prolongation of a trajectory to the refined grid pair.
    fn prolonged_copy(traj: &Trajectory) -> Trajectory {
        let fine_mesh = Arc::new(refine_uniform(&traj.space.mesh));
        let fine_space = FESpace::new(fine_mesh);
        let nc = traj.grid.steps;
        let mut phi_nodes = Vec::new();
        let mut q_nodes = Vec::new();
        for m in 0..=2 * nc {
            let (p, q) = if m % 2 == 0 {
                (traj.phi_nodes[m / 2].clone(), traj.q_nodes[m / 2].clone())
            } else {
                (
                    traj.phi_nodes[m / 2].midpoint(&traj.phi_nodes[m / 2 + 1]),
                    traj.q_nodes[m / 2].midpoint(&traj.q_nodes[m / 2 + 1]),
                )
            };
            phi_nodes.push(prolong(&p, &fine_space).unwrap());
            q_nodes.push(prolong(&q, &fine_space).unwrap());
        }
        let mut mu_slabs = Vec::new();
        for mf in 0..2 * nc {
            mu_slabs.push(prolong(&traj.mu_slabs[mf / 2], &fine_space).unwrap());
        }
        Trajectory {
            space: fine_space,
            coeffs: traj.coeffs.clone(),
            grid: TimeGrid::new(traj.grid.final_time, 2 * nc).unwrap(),
            phi_nodes,
            q_nodes,
            mu_slabs,
            diagnostics: Vec::new(),
        }
    }

    #[test]
    fn self_comparison_vanishes() {
        let coarse = small_trajectory(4, 2);
        let fine = prolonged_copy(&coarse);
        let e = compare_trajectories(&coarse, &fine).unwrap();
        assert!(e.e_phi <= 1e-12, "e_phi {}", e.e_phi);
        assert!(e.e_q <= 1e-12);
        assert!(e.e_mu_bar <= 1e-12);
        // The slab average of a genuinely time-varying q is
        // resolution-dependent (the piecewise-constant projection of the same
        // piecewise-linear function differs between slab widths), so this
        // component is only quadratically small in tau rather than zero.
        assert!(e.e_q_bar <= 1e-4, "e_q_bar {}", e.e_q_bar);
    }

    /// Steady-state trajectory: constant in time, so every slab projection is
    /// exact and the self-comparison identities hold to round-off.
    fn steady_trajectory(n: usize, steps: usize) -> Trajectory {
        let space = FESpace::new(Arc::new(build_periodic_unit_square_mesh(n).unwrap()));
        let coeffs = CoefficientFamily::experiment1().build();
        let phi0 = FEFunction::constant(Arc::clone(&space), 0.5);
        let q0 = FEFunction::zeros(Arc::clone(&space));
        let grid = TimeGrid::new(0.1 * steps as f64, steps).unwrap();
        run_simulation(&space, &coeffs, grid, phi0, q0, &NewtonConfig::default()).unwrap()
    }

    #[test]
    fn constant_q_shift_isolates_components() {
        let coarse = steady_trajectory(4, 2);
        let mut fine = prolonged_copy(&coarse);
        let shift = 0.41;
        for qn in &mut fine.q_nodes {
            for c in &mut qn.coefficients {
                *c += shift;
            }
        }
        let e = compare_trajectories(&coarse, &fine).unwrap();
        let t = coarse.grid.final_time;
        assert!((e.e_q - shift * shift).abs() < 1e-10, "e_q {}", e.e_q);
        assert!(
            (e.e_q_bar - shift * shift * t).abs() < 1e-10,
            "e_q_bar {} vs {}",
            e.e_q_bar,
            shift * shift * t
        );
        assert!(e.e_phi < 1e-12);
        assert!(e.e_mu_bar < 1e-12);

        // On the steady trajectory the full self-comparison vanishes.
        let clean = compare_trajectories(&coarse, &prolonged_copy(&coarse)).unwrap();
        assert!(clean.total() <= 1e-12, "total {}", clean.total());
    }

    #[test]
    fn phi_shift_invariance() {
        // Adding the same constant field to both phi trajectories leaves all
        // differences unchanged.
        let coarse = small_trajectory(4, 2);
        let fine = prolonged_copy(&coarse);
        let base = compare_trajectories(&coarse, &fine).unwrap();

        let mut coarse2 = coarse.clone();
        let mut fine2 = fine.clone();
        for f in coarse2.phi_nodes.iter_mut().chain(fine2.phi_nodes.iter_mut()) {
            for c in &mut f.coefficients {
                *c += 0.77;
            }
        }
        let shifted = compare_trajectories(&coarse2, &fine2).unwrap();
        assert!((base.e_phi - shifted.e_phi).abs() < 1e-12);
        assert!((base.e_mu_bar - shifted.e_mu_bar).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let coarse = small_trajectory(4, 2);
        let other = small_trajectory(4, 2);
        assert!(matches!(
            compare_trajectories(&coarse, &other),
            Err(Error::GridMismatch(_)) | Err(Error::NotRefinementPair)
        ));
    }

    #[test]
    fn eoc_examples() {
        let r = eoc(&[1.0, 1.0 / 16.0]).unwrap();
        assert!((r[0] - 4.0).abs() < 1e-12);

        let r = eoc(&[8.02e-3, 5.32e-4]).unwrap();
        assert!((r[0] - 3.91).abs() < 5e-3, "rate {}", r[0]);

        let r = eoc(&[0.3, 0.3, 0.3]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));

        assert!(eoc(&[1.0, 0.0]).is_err());
        assert!(eoc(&[1.0, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn eoc_recovers_geometric_rate(p in 0.25f64..6.0, e0 in 1e-6f64..1e3, len in 2usize..6) {
            let errors: Vec<f64> = (0..len).map(|k| e0 * 0.5f64.powf(p * k as f64)).collect();
            let rates = eoc(&errors).unwrap();
            for r in rates {
                prop_assert!((r - p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn structure_report_passes_and_detects_tampering() {
        let space = FESpace::new(Arc::new(build_periodic_unit_square_mesh(4).unwrap()));
        let coeffs = CoefficientFamily::experiment1().build();
        let phi0 = FEFunction::constant(Arc::clone(&space), 0.5);
        let q0 = FEFunction::zeros(Arc::clone(&space));
        let grid = TimeGrid::new(0.5, 5).unwrap();
        let traj =
            run_simulation(&space, &coeffs, grid, phi0, q0, &NewtonConfig::default()).unwrap();

        let report = structure_report(&traj);
        assert!(report.pass(), "{report}");
        assert!(report.max_mass_drift <= 1e-12);
        assert!(report.max_identity_residual <= 1e-12);

        // P2 vertex basis functions integrate to zero, so tamper an
        // edge-midpoint DOF to move the mass.
        let edge_dof = space.mesh.vertex_count() + 5;
        let mut tampered = traj.clone();
        tampered.phi_nodes[3].coefficients[edge_dof] += 1e-3;
        let bad = structure_report(&tampered);
        assert!(!bad.pass());
        assert!(bad.max_mass_drift > bad.mass_threshold);
    }

    #[test]
    fn study_rejects_too_coarse_start() {
        let coeffs = CoefficientFamily::experiment1().build();
        let study = StudyConfig {
            final_time: 0.5,
            k_min: 0,
            k_max: 1,
            newton: NewtonConfig::default(),
        };
        let err = run_convergence_study(&coeffs, &study, |_| unreachable!(), |_, _| {})
            .unwrap_err();
        assert!(err.to_string().contains("start at level 1"), "{err}");
    }
}
