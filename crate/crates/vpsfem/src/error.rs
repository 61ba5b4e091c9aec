//! Error type shared by all solver components.

/// Errors produced by mesh construction, linear algebra, and time stepping.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Periodic identification needs at least 3 cells per axis: with n < 3 two
    /// distinct edges connect the same vertex pair, so edges are no longer
    /// identifiable by their endpoints.
    #[error(
        "mesh resolution n = {n} is too coarse: periodic wrapping with n < 3 creates \
         duplicate vertex-pair edges (edges would not be identifiable by their endpoints); \
         use n >= 3"
    )]
    MeshTooCoarse { n: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error(
        "Newton did not converge after {iterations} iterations \
         (residual {residual:.3e}, tolerance {tolerance:.3e}); consider reducing the time step"
    )]
    NewtonDiverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("element index {element} out of range ({count} elements)")]
    ElementOutOfRange { element: usize, count: usize },

    #[error("meshes are not in a parent-child refinement relation")]
    NotRefinementPair,

    #[error("trajectories live on incompatible grids: {0}")]
    GridMismatch(String),

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
