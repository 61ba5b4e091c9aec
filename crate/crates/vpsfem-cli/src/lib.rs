//! Command-line front end: JSON configuration, initial-data generation,
//! simulation and convergence drivers, and CSV/VTK export.

pub mod app;
pub mod config;
pub mod csv;
pub mod initial;
pub mod vtk;

pub use app::run_cli;
pub use config::{CustomCoefficients, NewtonSettings, PresetChoice, RunConfig};
pub use csv::{render_diagnostics_csv, write_diagnostics_csv};
pub use initial::{build_problem, make_initial_data, SplitMix64};
pub use vtk::{render_snapshot_vtk, write_snapshot_vtk};

/// Front-end errors; solver errors pass through unchanged.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Solver(#[from] vpsfem::Error),
}
