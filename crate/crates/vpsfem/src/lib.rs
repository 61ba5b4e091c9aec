//! 2D periodic finite-element simulator for a simplified viscoelastic
//! phase-separation model: Cahn-Hilliard dynamics coupled to a relaxing bulk
//! stress, discretized with P2 elements in space and a variational
//! (piecewise-linear trial / piecewise-constant test) scheme in time.
//!
//! The discretization conserves mass exactly and satisfies a discrete
//! energy-dissipation identity at the quadrature-functional level; both are
//! tracked as per-step diagnostics. A convergence harness compares runs on
//! consecutively refined space-time grids and reports experimental orders of
//! convergence.

pub mod analysis;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod model;
pub mod stepper;

pub use analysis::{compare_trajectories, eoc, structure_report, ConvergenceReport, ErrorComponents, StructureReport};
pub use error::{Error, Result};
pub use fem::{
    assemble_matrix, evaluate, functional, project, prolong, FEFunction, FESpace, Field, FnField,
    FunctionalKind, MatrixKind, ProjectionKind,
};
pub use fem::quadrature::QuadRule;
pub use fem::solver::set_parallelism;
pub use fem::sparse::SparseMatrix;
pub use mesh::{build_periodic_unit_square_mesh, refine_uniform, PeriodicMesh};
pub use model::{
    dissipation, energy, relative_energy, validate_assumptions, DiagnosticsRecord,
    ModelCoefficients, ValidationReport,
};
pub use stepper::{run_simulation, solve_time_step, NewtonConfig, TimeGrid, Trajectory};

#[cfg(test)]
mod thread_safety {
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn shared_types_are_send_and_sync() {
        // Meshes, spaces, coefficient bundles, and trajectories are immutable
        // after construction and safe to share across threads; convergence
        // levels may run concurrently.
        assert_send_sync::<crate::mesh::PeriodicMesh>();
        assert_send_sync::<crate::fem::FESpace>();
        assert_send_sync::<crate::fem::FEFunction>();
        assert_send_sync::<crate::model::ModelCoefficients>();
        assert_send_sync::<crate::stepper::Trajectory>();
    }
}
