//! Command-line driver: simulate, converge, check, and validate subcommands.
//!
//! Exit codes: 0 on success, 2 when a validation or structure check fails,
//! 1 on configuration or runtime errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use vpsfem::analysis::{run_convergence_study, structure_report, StudyConfig};
use vpsfem::fem::FESpace;
use vpsfem::mesh::build_periodic_unit_square_mesh;
use vpsfem::model::{derivative_consistency, validate_assumptions};
use vpsfem::stepper::{run_simulation, TimeGrid, Trajectory};

use crate::config::RunConfig;
use crate::csv::write_diagnostics_csv;
use crate::initial::{build_problem, coefficients_for, make_initial_data};
use crate::vtk::write_snapshot_vtk;
use crate::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "vpsfem",
    about = "Periodic P2 finite-element simulator for viscoelastic phase separation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation and export diagnostics CSV and VTK snapshots.
    Simulate(SimulateArgs),
    /// Run a refinement ladder and report errors and convergence orders.
    Converge(ConvergeArgs),
    /// Run a simulation and verify mass conservation and energy dissipation.
    Check(ConfigOnly),
    /// Check the coefficient assumptions for a configuration.
    Validate(ConfigOnly),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Finest reported level; the study also runs level `levels + 1` as the
    /// comparison partner.
    #[arg(long)]
    levels: usize,
    /// Coarsest level (level k runs on a mesh with 2^(1+k) cells per axis).
    #[arg(long, default_value_t = 1)]
    min_level: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConfigOnly {
    #[arg(long)]
    config: PathBuf,
}

/// Parses arguments and runs a subcommand, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    apply_thread_env();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports --help/--version through Err as well.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Converge(a) => converge(&a),
        Command::Check(a) => check(&a),
        Command::Validate(a) => validate(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `VPSFEM_THREADS`: 0 (default) keeps the factorization backend sequential
/// and runs bit-reproducibly; larger values enable that many threads.
fn apply_thread_env() {
    let threads = std::env::var("VPSFEM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    vpsfem::set_parallelism(threads);
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

fn run_from_config(config: &RunConfig) -> Result<(Arc<FESpace>, Trajectory), CliError> {
    let mesh = Arc::new(build_periodic_unit_square_mesh(config.n)?);
    let space = FESpace::new(mesh);
    let (coeffs, phi0, q0) = build_problem(config, &space)?;
    let grid = TimeGrid::new(config.final_time, config.step_count())?;
    let traj = run_simulation(&space, &coeffs, grid, phi0, q0, &config.newton.into())?;
    Ok((space, traj))
}

fn output_dir(config: &RunConfig, cli_out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = cli_out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let config = load_config(&args.config)?;
    let dir = output_dir(&config, &args.out)?;
    let (space, traj) = run_from_config(&config)?;

    write_diagnostics_csv(&dir.join("diagnostics.csv"), &traj.diagnostics)?;

    let stride = config.snapshot_stride;
    let n_steps = traj.grid.steps;
    for k in 0..=n_steps {
        let periodic = stride > 0 && k % stride == 0;
        if !(periodic || k == 0 || k == n_steps) {
            continue;
        }
        // The mu array of a node is the constant of the adjacent slab
        // (the first slab for the initial snapshot).
        let mu = if k == 0 {
            &traj.mu_slabs[0]
        } else {
            &traj.mu_slabs[k - 1]
        };
        write_snapshot_vtk(
            &dir.join(format!("snapshot_{k:06}.vtk")),
            &space,
            &traj.phi_nodes[k],
            &traj.q_nodes[k],
            mu,
        )?;
    }
    let last = traj.diagnostics.last().expect("at least the initial record");
    println!(
        "completed {} steps to t = {}: mass {:.12}, energy {:.12}",
        n_steps, last.t, last.mass, last.energy
    );
    println!("wrote {}", dir.join("diagnostics.csv").display());
    Ok(0)
}

fn converge(args: &ConvergeArgs) -> Result<i32, CliError> {
    let config = load_config(&args.config)?;
    let dir = output_dir(&config, &args.out)?;
    let preset = config.preset.clone();
    let seed = config.seed;

    // Coefficients fixed across levels; experiment-2 phi_star comes from the
    // coarsest level's initial mass.
    let coarse_mesh = Arc::new(build_periodic_unit_square_mesh(
        1usize << (1 + args.min_level),
    )?);
    let coarse_space = FESpace::new(coarse_mesh);
    let (coeffs, _, _) = build_problem(&config, &coarse_space)?;

    let study = StudyConfig {
        final_time: config.final_time,
        k_min: args.min_level,
        k_max: args.levels,
        newton: config.newton.into(),
    };
    let report = run_convergence_study(
        &coeffs,
        &study,
        |space| {
            make_initial_data(space, &preset, seed).map_err(|e| {
                vpsfem::Error::InvalidInput(format!("initial data generation failed: {e}"))
            })
        },
        |k, traj| {
            let d = traj.diagnostics.last().expect("diagnostics present");
            eprintln!(
                "level {k} (n = {}, {} steps): energy {:.9}, mass {:.12}",
                traj.space.mesh.n, traj.grid.steps, d.energy, d.mass
            );
        },
    )?;

    let text = report.render_text();
    print!("{text}");
    std::fs::write(dir.join("convergence.txt"), &text)
        .map_err(|e| CliError::Io(format!("cannot write convergence.txt: {e}")))?;
    std::fs::write(dir.join("convergence.csv"), report.render_csv())
        .map_err(|e| CliError::Io(format!("cannot write convergence.csv: {e}")))?;
    Ok(0)
}

fn check(args: &ConfigOnly) -> Result<i32, CliError> {
    let config = load_config(&args.config)?;
    let (_, traj) = run_from_config(&config)?;
    let report = structure_report(&traj);
    print!("{report}");
    Ok(if report.pass() { 0 } else { 2 })
}

fn validate(args: &ConfigOnly) -> Result<i32, CliError> {
    let config = load_config(&args.config)?;
    let coeffs = coefficients_for(&config.preset);
    let report = validate_assumptions(&coeffs, (0.0, 1.0), 1000);
    print!("{report}");
    let fd = derivative_consistency(&coeffs, (-0.2, 1.2), 1000);
    println!("derivative consistency  worst mismatch {fd:.3e}");
    let ok = report.pass() && fd <= 1e-6;
    Ok(if ok { 0 } else { 2 })
}
