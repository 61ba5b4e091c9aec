//! The variational time discretization: piecewise-linear-in-time trial
//! functions for phi and q tested against piecewise constants, with a
//! per-slab constant chemical potential. Each slab reduces to a midpoint-type
//! fully implicit system solved by Newton with an exact Jacobian.
//!
//! With phi_bar = (phi^{n-1} + phi^n)/2, q_bar = (q^{n-1} + q^n)/2 and mu_bar
//! constant on the slab, the slab equations tested with psi in the P2 space
//! are
//!
//!   <phi^n - phi^{n-1}, psi> + tau <b(phi_bar) grad(mu_bar)
//!       - c(phi_bar) grad(A(phi_bar) q_bar), grad(psi)> = 0,
//!   <mu_bar, psi> - gamma <grad(phi_bar), grad(psi)> - <fbar', psi> = 0,
//!   <q^n - q^{n-1}, psi> + tau [ <d0 grad(A(phi_bar) q_bar)
//!       - c(phi_bar) grad(mu_bar), grad(A(phi_bar) psi)>
//!       + <kappa(phi_bar) q_bar, psi> + epsilon <grad(q_bar), grad(psi)> ] = 0,
//!
//! where fbar' is the time average of f' along the linear path from phi^{n-1}
//! to phi^n, integrated with 3-point Gauss (exact for quartic potentials), and
//! every grad(A(phi_bar) *) factor is expanded by the product rule at the
//! quadrature points. Testing the first equation with 1 gives exact mass
//! conservation; testing the three equations with mu_bar, the discrete time
//! derivative of phi, and q_bar telescopes into the energy identity
//! E^n - E^{n-1} + tau D(phi_bar; mu_bar, q_bar) = 0 at the level of the
//! shared quadrature rule, up to the Newton residual.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::quadrature::time_gauss_3;
use crate::fem::solver::DirectSolver;
use crate::fem::sparse::SparseMatrix;
use crate::fem::{assemble_matrix, FEFunction, FESpace, MatrixKind};
use crate::model::{dissipation, energy, DiagnosticsRecord, ModelCoefficients};

/// Uniform time grid on [0, T].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0) || steps == 0 {
            return Err(Error::InvalidInput(format!(
                "time grid needs T > 0 and N >= 1, got T = {final_time}, N = {steps}"
            )));
        }
        Ok(TimeGrid { final_time, steps })
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn node(&self, n: usize) -> f64 {
        n as f64 * self.tau()
    }
}

/// Newton settings for the per-slab nonlinear solve.
///
/// The convergence threshold applied to the residual infinity norm is
/// `residual_tol / dof_count`, so the induced defect in the energy identity
/// stays uniformly small under mesh refinement.
#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub damping: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            residual_tol: 1e-11,
            max_iterations: 25,
            damping: true,
        }
    }
}

/// Convergence record of one Newton solve.
#[derive(Clone, Debug)]
pub struct StepStats {
    pub iterations: usize,
    pub final_residual: f64,
    /// Residual infinity norms, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

/// A discrete solution: nodal fields phi and q (piecewise linear in time),
/// per-slab constant chemical potentials, and per-step diagnostics.
#[derive(Clone)]
pub struct Trajectory {
    pub space: Arc<FESpace>,
    pub coeffs: ModelCoefficients,
    pub grid: TimeGrid,
    pub phi_nodes: Vec<FEFunction>,
    pub q_nodes: Vec<FEFunction>,
    pub mu_slabs: Vec<FEFunction>,
    pub diagnostics: Vec<DiagnosticsRecord>,
}

impl Trajectory {
    /// Piecewise-linear-in-time evaluation of phi at an arbitrary time.
    pub fn phi_at(&self, t: f64) -> FEFunction {
        interp_nodes(&self.phi_nodes, &self.grid, t)
    }

    /// Piecewise-linear-in-time evaluation of q.
    pub fn q_at(&self, t: f64) -> FEFunction {
        interp_nodes(&self.q_nodes, &self.grid, t)
    }

    /// Slab midpoint average of q on slab `n` (0-based), matching the
    /// scheme's internal time averages.
    pub fn q_bar(&self, n: usize) -> FEFunction {
        self.q_nodes[n].midpoint(&self.q_nodes[n + 1])
    }

    pub fn phi_bar(&self, n: usize) -> FEFunction {
        self.phi_nodes[n].midpoint(&self.phi_nodes[n + 1])
    }
}

fn interp_nodes(nodes: &[FEFunction], grid: &TimeGrid, t: f64) -> FEFunction {
    let tau = grid.tau();
    let s = (t / tau).clamp(0.0, (nodes.len() - 1) as f64);
    let k = (s.floor() as usize).min(nodes.len() - 2);
    let theta = s - k as f64;
    nodes[k].combine(1.0 - theta, &nodes[k + 1], theta)
}

const N_LOCAL: usize = 6;

/// Assembly and factorization workspace for one space, reused across steps.
pub struct StepContext {
    space: Arc<FESpace>,
    matrix: SparseMatrix,
    solver: DirectSolver,
    /// Scalar-row nonzero counts, for block scatter index arithmetic.
    scalar_nnz: Vec<usize>,
    /// Per element: position of column dofs[b] within the scalar row of
    /// dofs[a], flattened as a*6 + b.
    elem_pos: Vec<[u32; N_LOCAL * N_LOCAL]>,
    mass: SparseMatrix,
    mass_solver: DirectSolver,
}

impl StepContext {
    pub fn new(space: &Arc<FESpace>) -> Result<Self> {
        let m = space.dof_count;
        let adj = space.scalar_adjacency();

        // Block pattern: unknowns ordered [phi | mu | q]; all nine blocks
        // share the scalar coupling pattern (the mu-q block is kept as
        // explicit zeros, which keeps the pattern structurally symmetric and
        // the scatter arithmetic uniform).
        let mut cols_per_row = Vec::with_capacity(3 * m);
        for _block in 0..3 {
            for i in 0..m {
                let mut cols = Vec::with_capacity(3 * adj[i].len());
                for cb in 0..3 {
                    cols.extend(adj[i].iter().map(|&j| cb * m + j));
                }
                cols_per_row.push(cols);
            }
        }
        let matrix = SparseMatrix::from_pattern(3 * m, 3 * m, &cols_per_row);
        let solver = DirectSolver::new(&matrix)?;

        let scalar_nnz: Vec<usize> = adj.iter().map(|c| c.len()).collect();
        let mut elem_pos = Vec::with_capacity(space.element_count());
        for dofs in &space.element_dofs {
            let mut pos = [0u32; N_LOCAL * N_LOCAL];
            for a in 0..N_LOCAL {
                let row = &adj[dofs[a]];
                for b in 0..N_LOCAL {
                    let p = row.binary_search(&dofs[b]).expect("pattern covers element");
                    pos[a * N_LOCAL + b] = p as u32;
                }
            }
            elem_pos.push(pos);
        }

        let mass = assemble_matrix(space, MatrixKind::Mass);
        let mass_solver = DirectSolver::new(&mass)?;

        Ok(StepContext {
            space: Arc::clone(space),
            matrix,
            solver,
            scalar_nnz,
            elem_pos,
            mass,
            mass_solver,
        })
    }

    /// L2 projection of the pointwise field f'(phi), used as the chemical
    /// potential warm start for the first slab.
    pub fn mu_from_potential(
        &mut self,
        coeffs: &ModelCoefficients,
        phi: &FEFunction,
    ) -> Result<FEFunction> {
        let space = &self.space;
        let nq = space.quad_point_count();
        let mut rhs = vec![0.0f64; space.dof_count];
        for el in 0..space.element_count() {
            let area = space.element_area(el);
            let dofs = &space.element_dofs[el];
            for q in 0..nq {
                let w = space.quad.weights[q] * area;
                let vals = space.shape_at(q);
                let mut pv = 0.0;
                for i in 0..N_LOCAL {
                    pv += phi.coefficients[dofs[i]] * vals[i];
                }
                let fp = coeffs.f_prime(pv);
                for i in 0..N_LOCAL {
                    rhs[dofs[i]] += w * fp * vals[i];
                }
            }
        }
        let fact = self.mass_solver.factorize(&self.mass)?;
        fact.solve_in_place(&mut rhs);
        Ok(FEFunction::from_coefficients(Arc::clone(space), rhs))
    }

    /// Galerkin residual of the slab system at `x = [phi^n | mu_bar | q^n]`,
    /// and, when requested, its exact Jacobian in `self.matrix`.
    pub fn assemble(
        &mut self,
        coeffs: &ModelCoefficients,
        phi_prev: &[f64],
        q_prev: &[f64],
        x: &[f64],
        tau: f64,
        with_jacobian: bool,
        residual: &mut [f64],
    ) {
        let space = Arc::clone(&self.space);
        let m = space.dof_count;
        debug_assert_eq!(x.len(), 3 * m);
        debug_assert_eq!(residual.len(), 3 * m);
        residual.iter_mut().for_each(|v| *v = 0.0);
        if with_jacobian {
            self.matrix.set_zero();
        }
        let (phi_n, rest) = x.split_at(m);
        let (mu, q_n) = rest.split_at(m);
        let tg = time_gauss_3();
        let nq = space.quad_point_count();
        let gamma = coeffs.gamma;
        let eps = coeffs.epsilon;
        let d0 = coeffs.d0;

        let mut local_res = [[0.0f64; N_LOCAL]; 3];
        let mut local_jac = [[[0.0f64; N_LOCAL]; N_LOCAL]; 9];

        for el in 0..space.element_count() {
            let dofs = &space.element_dofs[el];
            let area = space.element_area(el);

            let mut phi_p = [0.0f64; N_LOCAL];
            let mut q_p = [0.0f64; N_LOCAL];
            let mut phi_c = [0.0f64; N_LOCAL];
            let mut mu_c = [0.0f64; N_LOCAL];
            let mut q_c = [0.0f64; N_LOCAL];
            for i in 0..N_LOCAL {
                let d = dofs[i];
                phi_p[i] = phi_prev[d];
                q_p[i] = q_prev[d];
                phi_c[i] = phi_n[d];
                mu_c[i] = mu[d];
                q_c[i] = q_n[d];
            }

            for r in local_res.iter_mut() {
                r.fill(0.0);
            }
            if with_jacobian {
                for blk in local_jac.iter_mut() {
                    for row in blk.iter_mut() {
                        row.fill(0.0);
                    }
                }
            }

            for q in 0..nq {
                let w = space.quad.weights[q] * area;
                let sv = space.shape_at(q);
                let sg = space.shape_grad_at(el, q);

                // State at the quadrature point.
                let mut phiprev_v = 0.0;
                let mut phin_v = 0.0;
                let mut qprev_v = 0.0;
                let mut qn_v = 0.0;
                let mut mu_v = 0.0;
                let mut gphib = [0.0f64; 2];
                let mut gmu = [0.0f64; 2];
                let mut gqb = [0.0f64; 2];
                for i in 0..N_LOCAL {
                    phiprev_v += phi_p[i] * sv[i];
                    phin_v += phi_c[i] * sv[i];
                    qprev_v += q_p[i] * sv[i];
                    qn_v += q_c[i] * sv[i];
                    mu_v += mu_c[i] * sv[i];
                    let pb = 0.5 * (phi_p[i] + phi_c[i]);
                    let qb = 0.5 * (q_p[i] + q_c[i]);
                    gphib[0] += pb * sg[i][0];
                    gphib[1] += pb * sg[i][1];
                    gmu[0] += mu_c[i] * sg[i][0];
                    gmu[1] += mu_c[i] * sg[i][1];
                    gqb[0] += qb * sg[i][0];
                    gqb[1] += qb * sg[i][1];
                }
                let phib = 0.5 * (phiprev_v + phin_v);
                let qb_v = 0.5 * (qprev_v + qn_v);

                // Coefficients at phi_bar.
                let b_v = coeffs.b(phib);
                let c_v = coeffs.c(phib);
                let a_v = coeffs.a(phib);
                let ap_v = coeffs.a_prime(phib);
                let kap_v = coeffs.kappa(phib);

                // Time-averaged potential derivative along the linear path.
                let dphi_v = phin_v - phiprev_v;
                let mut fbar_p = 0.0;
                let mut fbar_pp_theta = 0.0;
                for &(theta, wt) in &tg {
                    let pg = phiprev_v + theta * dphi_v;
                    fbar_p += wt * coeffs.f_prime(pg);
                    fbar_pp_theta += wt * theta * coeffs.f_second(pg);
                }

                // w_vec = grad(A(phi_bar) q_bar) expanded by the product rule.
                let wv = [
                    ap_v * gphib[0] * qb_v + a_v * gqb[0],
                    ap_v * gphib[1] * qb_v + a_v * gqb[1],
                ];
                let flux = [b_v * gmu[0] - c_v * wv[0], b_v * gmu[1] - c_v * wv[1]];
                let s_vec = [d0 * wv[0] - c_v * gmu[0], d0 * wv[1] - c_v * gmu[1]];

                // Test-side vectors T_i = grad(A(phi_bar) psi_i) expanded.
                let mut t_vec = [[0.0f64; 2]; N_LOCAL];
                for i in 0..N_LOCAL {
                    t_vec[i][0] = ap_v * gphib[0] * sv[i] + a_v * sg[i][0];
                    t_vec[i][1] = ap_v * gphib[1] * sv[i] + a_v * sg[i][1];
                }

                for i in 0..N_LOCAL {
                    local_res[0][i] += w
                        * ((phin_v - phiprev_v) * sv[i]
                            + tau * (flux[0] * sg[i][0] + flux[1] * sg[i][1]));
                    local_res[1][i] += w
                        * (mu_v * sv[i]
                            - gamma * (gphib[0] * sg[i][0] + gphib[1] * sg[i][1])
                            - fbar_p * sv[i]);
                    local_res[2][i] += w
                        * ((qn_v - qprev_v) * sv[i]
                            + tau
                                * (s_vec[0] * t_vec[i][0]
                                    + s_vec[1] * t_vec[i][1]
                                    + kap_v * qb_v * sv[i]
                                    + eps * (gqb[0] * sg[i][0] + gqb[1] * sg[i][1])));
                }

                if !with_jacobian {
                    continue;
                }

                let bp_v = coeffs.b_prime(phib);
                let cp_v = coeffs.c_prime(phib);
                let app_v = coeffs.a_second(phib);
                let kapp_v = coeffs.kappa_prime(phib);
                let s_dot_gphib = s_vec[0] * gphib[0] + s_vec[1] * gphib[1];

                // Trial-side variations; the midpoint averages contribute a
                // factor 1/2 for phi^n and q^n directions.
                let mut dwphi = [[0.0f64; 2]; N_LOCAL];
                let mut dwq = [[0.0f64; 2]; N_LOCAL];
                let mut dflux_phi = [[0.0f64; 2]; N_LOCAL];
                let mut ds_phi = [[0.0f64; 2]; N_LOCAL];
                let mut s_dot_g = [0.0f64; N_LOCAL];
                for j in 0..N_LOCAL {
                    let half_n = 0.5 * sv[j];
                    let half_g = [0.5 * sg[j][0], 0.5 * sg[j][1]];
                    for d in 0..2 {
                        dwphi[j][d] =
                            app_v * half_n * gphib[d] * qb_v + ap_v * half_g[d] * qb_v
                                + ap_v * half_n * gqb[d];
                        dwq[j][d] = ap_v * gphib[d] * half_n + a_v * half_g[d];
                        dflux_phi[j][d] = bp_v * half_n * gmu[d]
                            - cp_v * half_n * wv[d]
                            - c_v * dwphi[j][d];
                        ds_phi[j][d] = d0 * dwphi[j][d] - cp_v * half_n * gmu[d];
                    }
                    s_dot_g[j] = s_vec[0] * sg[j][0] + s_vec[1] * sg[j][1];
                }

                for i in 0..N_LOCAL {
                    let gi = sg[i];
                    let ni = sv[i];
                    for j in 0..N_LOCAL {
                        let gj = sg[j];
                        let nj = sv[j];
                        let mass_ij = nj * ni;
                        let stiff_ij = gj[0] * gi[0] + gj[1] * gi[1];

                        // (phi, phi), (phi, mu), (phi, q)
                        local_jac[0][i][j] += w
                            * (mass_ij
                                + tau * (dflux_phi[j][0] * gi[0] + dflux_phi[j][1] * gi[1]));
                        local_jac[1][i][j] += w * tau * b_v * stiff_ij;
                        local_jac[2][i][j] -=
                            w * tau * c_v * (dwq[j][0] * gi[0] + dwq[j][1] * gi[1]);

                        // (mu, phi), (mu, mu); the (mu, q) block is zero.
                        local_jac[3][i][j] += w
                            * (-0.5 * gamma * stiff_ij - fbar_pp_theta * mass_ij);
                        local_jac[4][i][j] += w * mass_ij;

                        // (q, phi), (q, mu), (q, q)
                        // S . dT_i/dphi_j expands into three pairable terms.
                        let s_dot_dt = app_v * 0.5 * nj * s_dot_gphib * ni
                            + ap_v * 0.5 * s_dot_g[j] * ni
                            + ap_v * 0.5 * nj * (s_vec[0] * gi[0] + s_vec[1] * gi[1]);
                        local_jac[6][i][j] += w
                            * tau
                            * (ds_phi[j][0] * t_vec[i][0]
                                + ds_phi[j][1] * t_vec[i][1]
                                + s_dot_dt
                                + kapp_v * 0.5 * nj * qb_v * ni);
                        local_jac[7][i][j] -= w
                            * tau
                            * c_v
                            * (gj[0] * t_vec[i][0] + gj[1] * t_vec[i][1]);
                        local_jac[8][i][j] += w
                            * (mass_ij
                                + tau
                                    * (d0 * (dwq[j][0] * t_vec[i][0] + dwq[j][1] * t_vec[i][1])
                                        + kap_v * 0.5 * mass_ij
                                        + 0.5 * eps * stiff_ij));
                    }
                }
            }

            // Scatter.
            for blk_r in 0..3 {
                for a in 0..N_LOCAL {
                    residual[blk_r * m + dofs[a]] += local_res[blk_r][a];
                }
            }
            if with_jacobian {
                let pos = &self.elem_pos[el];
                for a in 0..N_LOCAL {
                    let i = dofs[a];
                    let k_i = self.scalar_nnz[i];
                    for blk_r in 0..3 {
                        let row_base = self.matrix.row_ptr[blk_r * m + i];
                        for blk_c in 0..3 {
                            let blk = blk_r * 3 + blk_c;
                            if blk == 5 {
                                continue; // (mu, q) identically zero
                            }
                            let base = row_base + blk_c * k_i;
                            for b in 0..N_LOCAL {
                                let idx = base + pos[a * N_LOCAL + b] as usize;
                                self.matrix.values[idx] += local_jac[blk][a][b];
                            }
                        }
                    }
                }
            }
        }
    }

    /// One implicit slab solve. Returns the new nodal fields, the slab
    /// chemical potential, and the Newton statistics.
    ///
    /// When Newton fails from the warm start (an under-resolved spinodal
    /// transient puts the slab solution outside every nearby Newton basin,
    /// and the slab family can fold in the step width), the solution is
    /// located by pseudo-transient continuation: implicit Euler pseudo-steps
    /// of the auxiliary flow whose pairing with the residual telescopes into
    /// the energy-dissipation balance, so trajectories stay bounded and
    /// settle on a slab solution. The system finally solved is always the
    /// original tau slab; the structure properties are untouched.
    pub fn solve_step(
        &mut self,
        coeffs: &ModelCoefficients,
        phi_prev: &FEFunction,
        q_prev: &FEFunction,
        mu_guess: &FEFunction,
        tau: f64,
        cfg: &NewtonConfig,
    ) -> Result<(FEFunction, FEFunction, FEFunction, StepStats)> {
        let first =
            self.newton_solve(coeffs, phi_prev, q_prev, phi_prev, mu_guess, q_prev, tau, cfg);
        match first {
            Ok(out) => Ok(out),
            Err(_) => {
                match self.pseudo_transient_solve(coeffs, phi_prev, q_prev, mu_guess, tau, cfg) {
                    Ok(out) => Ok(out),
                    Err(_) => {
                        self.width_continuation_solve(coeffs, phi_prev, q_prev, mu_guess, tau, cfg)
                    }
                }
            }
        }
    }

    /// Continuation in the slab width: find a narrower slab solvable from the
    /// warm start, then grow the width adaptively back to tau along the
    /// solution branch. Covers widths below the branch fold that the
    /// pseudo-transient flow happens to miss.
    fn width_continuation_solve(
        &mut self,
        coeffs: &ModelCoefficients,
        phi_prev: &FEFunction,
        q_prev: &FEFunction,
        mu_guess: &FEFunction,
        tau: f64,
        cfg: &NewtonConfig,
    ) -> Result<(FEFunction, FEFunction, FEFunction, StepStats)> {
        let mut spent = 0usize;
        let probe_cfg = NewtonConfig {
            max_iterations: cfg.max_iterations.min(12),
            ..*cfg
        };
        let mut last_err = Error::NewtonDiverged {
            iterations: 0,
            residual: f64::INFINITY,
            tolerance: cfg.residual_tol / self.space.dof_count as f64,
        };
        let mut entry = None;
        let mut width = tau;
        for _ in 0..40 {
            width *= 0.5;
            match self.newton_solve(
                coeffs, phi_prev, q_prev, phi_prev, mu_guess, q_prev, width, &probe_cfg,
            ) {
                Ok((phi_b, q_b, mu_b, st)) => {
                    spent += st.iterations;
                    entry = Some((width, phi_b, q_b, mu_b));
                    break;
                }
                Err(e) => {
                    spent += probe_cfg.max_iterations;
                    last_err = e;
                }
            }
        }
        let (mut width, mut phi_b, mut q_b, mut mu_b) = match entry {
            Some(e) => e,
            None => return Err(last_err),
        };

        const MAX_BRANCH_SOLVES: usize = 400;
        let mut growth = 2.0f64;
        for _ in 0..MAX_BRANCH_SOLVES {
            let next = (width * growth).min(tau);
            match self.newton_solve(coeffs, phi_prev, q_prev, &phi_b, &mu_b, &q_b, next, cfg) {
                Ok((phi_n, q_n, mu_n, mut st)) => {
                    spent += st.iterations;
                    if next == tau {
                        st.iterations += spent;
                        return Ok((phi_n, q_n, mu_n, st));
                    }
                    width = next;
                    phi_b = phi_n;
                    q_b = q_n;
                    mu_b = mu_n;
                    growth = (growth * 1.3).min(2.0);
                }
                Err(e) => {
                    spent += cfg.max_iterations;
                    last_err = e;
                    growth = 1.0 + 0.5 * (growth - 1.0);
                    if growth - 1.0 < 1e-8 {
                        return Err(last_err);
                    }
                }
            }
        }
        Err(last_err)
    }

    /// Implicit-Euler pseudo-time integration of
    ///   M d(mu_bar)/ds = -R_phi,  M d(dphi/dt)/ds = -R_mu,  M d(q_bar)/ds = -R_q,
    /// which in the slab unknowns shifts the Jacobian by
    /// M/ds on the (phi, mu) block, M/(tau ds) on the (mu, phi) block, and
    /// M/(2 ds) on the (q, q) block. Equilibria are exactly the slab
    /// solutions; the pseudo-step grows adaptively so the end-game is plain
    /// Newton on the unmodified system.
    fn pseudo_transient_solve(
        &mut self,
        coeffs: &ModelCoefficients,
        phi_prev: &FEFunction,
        q_prev: &FEFunction,
        mu_guess: &FEFunction,
        tau: f64,
        cfg: &NewtonConfig,
    ) -> Result<(FEFunction, FEFunction, FEFunction, StepStats)> {
        let space = Arc::clone(&self.space);
        let m = space.dof_count;
        let tol = cfg.residual_tol / m as f64;

        let mut x = Vec::with_capacity(3 * m);
        x.extend_from_slice(&phi_prev.coefficients);
        x.extend_from_slice(&mu_guess.coefficients);
        x.extend_from_slice(&q_prev.coefficients);

        let mut residual = vec![0.0f64; 3 * m];
        let mut h_res = vec![0.0f64; 3 * m];
        let mut trial = vec![0.0f64; 3 * m];
        let mut trial_h = vec![0.0f64; 3 * m];
        let mut shift_vec = vec![0.0f64; 3 * m];

        let mut ds = 1e-2 * tau.min(1.0);
        let mut spent = 0usize;
        const MAX_PSEUDO_STEPS: usize = 400;
        // The slab solutions need not be stable equilibria of the pseudo-flow;
        // the flow then only passes near them. Whenever it reaches a clearly
        // better neighborhood, try to finish with plain Newton from there.
        let mut best_norm = f64::INFINITY;
        let mut since_polish = 0usize;

        for _pstep in 0..MAX_PSEUDO_STEPS {
            self.assemble(
                coeffs,
                &phi_prev.coefficients,
                &q_prev.coefficients,
                &x,
                tau,
                false,
                &mut residual,
            );
            let norm = inf_norm(&residual);
            if norm <= tol {
                let phi_next =
                    FEFunction::from_coefficients(Arc::clone(&space), x[..m].to_vec());
                let mu_slab =
                    FEFunction::from_coefficients(Arc::clone(&space), x[m..2 * m].to_vec());
                let q_next =
                    FEFunction::from_coefficients(Arc::clone(&space), x[2 * m..].to_vec());
                return Ok((
                    phi_next,
                    q_next,
                    mu_slab,
                    StepStats {
                        iterations: spent,
                        final_residual: norm,
                        residual_history: vec![norm],
                    },
                ));
            }
            if norm < 0.5 * best_norm || since_polish >= 40 {
                best_norm = best_norm.min(norm);
                since_polish = 0;
                let phi_s =
                    FEFunction::from_coefficients(Arc::clone(&space), x[..m].to_vec());
                let mu_s =
                    FEFunction::from_coefficients(Arc::clone(&space), x[m..2 * m].to_vec());
                let q_s =
                    FEFunction::from_coefficients(Arc::clone(&space), x[2 * m..].to_vec());
                if let Ok((phi_n, q_n, mu_n, mut st)) = self.newton_solve(
                    coeffs, phi_prev, q_prev, &phi_s, &mu_s, &q_s, tau, cfg,
                ) {
                    st.iterations += spent;
                    return Ok((phi_n, q_n, mu_n, st));
                }
                spent += cfg.max_iterations;
            } else {
                since_polish += 1;
            }

            // One implicit pseudo-step from the anchor x0 = x: inner Newton on
            // H(z) = R(z) + (1/ds) L (z - x0), solved loosely away from the
            // end-game.
            let x0 = x.clone();
            let inner_tol = (0.2 * two_norm(&residual)).max(tol * (3.0 * m as f64).sqrt());
            let mut z = x.clone();
            let mut advanced = false;
            for _inner in 0..8 {
                spent += 1;
                self.assemble(
                    coeffs,
                    &phi_prev.coefficients,
                    &q_prev.coefficients,
                    &z,
                    tau,
                    true,
                    &mut h_res,
                );
                self.apply_pairing_shift(ds, &z, &x0, &mut h_res, &mut shift_vec, true);
                let hnorm2 = two_norm(&h_res);
                if hnorm2 <= inner_tol {
                    advanced = true;
                    break;
                }
                let fact = self.solver.factorize(&self.matrix)?;
                let mut delta = h_res.clone();
                fact.solve_in_place(&mut delta);
                // Backtrack on the pseudo-step residual.
                let mut scale = 1.0;
                let mut ok = false;
                for _ in 0..12 {
                    for k in 0..3 * m {
                        trial[k] = z[k] - scale * delta[k];
                    }
                    self.assemble(
                        coeffs,
                        &phi_prev.coefficients,
                        &q_prev.coefficients,
                        &trial,
                        tau,
                        false,
                        &mut trial_h,
                    );
                    self.apply_pairing_shift(ds, &trial, &x0, &mut trial_h, &mut shift_vec, false);
                    if two_norm(&trial_h) < hnorm2 {
                        z.copy_from_slice(&trial);
                        ok = true;
                        break;
                    }
                    scale *= 0.5;
                }
                if !ok {
                    break;
                }
            }
            if advanced {
                x = z;
                ds *= 2.0;
            } else {
                ds *= 0.25;
                if ds < 1e-12 * tau {
                    return Err(Error::NewtonDiverged {
                        iterations: spent,
                        residual: norm,
                        tolerance: tol,
                    });
                }
            }
        }

        self.assemble(
            coeffs,
            &phi_prev.coefficients,
            &q_prev.coefficients,
            &x,
            tau,
            false,
            &mut residual,
        );
        Err(Error::NewtonDiverged {
            iterations: spent,
            residual: inf_norm(&residual),
            tolerance: tol,
        })
    }

    /// Adds the pseudo-transient pairing terms to an assembled residual and,
    /// when `with_matrix` is set, the matching shifts to the Jacobian blocks.
    fn apply_pairing_shift(
        &mut self,
        ds: f64,
        z: &[f64],
        x0: &[f64],
        h_res: &mut [f64],
        scratch: &mut [f64],
        with_matrix: bool,
    ) {
        let m = self.space.dof_count;
        // The coercive pairing is <R_phi, mu> - <R_mu, phi^n - phi^{n-1}>
        // + <R_q, q_bar> = dE + tau D, so the flow is
        //   M d(mu)/ds = -R_phi,  M d(phi^n)/ds = +R_mu,  M d(q_bar)/ds = -R_q,
        // and the implicit Euler residuals read
        //   H_phi = R_phi + M (mu - mu0)/ds,
        //   H_mu  = R_mu  - M (phi - phi0)/ds,
        //   H_q   = R_q   + M (q - q0)/(2 ds).
        let factors = [1.0 / ds, -1.0 / ds, 0.5 / ds];
        // Block row 0 pairs with the mu unknowns, row 1 with phi, row 2 with q.
        let src_block = [1usize, 0, 2];
        for (row, (&f, &src)) in factors.iter().zip(src_block.iter()).enumerate() {
            let diff = &mut scratch[..m];
            for i in 0..m {
                diff[i] = z[src * m + i] - x0[src * m + i];
            }
            // scratch <- M * diff accumulated into h_res[row block]
            for i in 0..m {
                let mut acc = 0.0;
                for p in self.mass.row_ptr[i]..self.mass.row_ptr[i + 1] {
                    acc += self.mass.values[p] * diff[self.mass.col_idx[p]];
                }
                h_res[row * m + i] += f * acc;
            }
        }
        if with_matrix {
            for i in 0..m {
                let k_i = self.scalar_nnz[i];
                let scalar_start = self.mass.row_ptr[i];
                // (phi-row, mu-col), (mu-row, phi-col), (q-row, q-col)
                let bases = [
                    self.matrix.row_ptr[i] + k_i,
                    self.matrix.row_ptr[m + i],
                    self.matrix.row_ptr[2 * m + i] + 2 * k_i,
                ];
                for (base, f) in bases.iter().zip(factors.iter()) {
                    for p in 0..k_i {
                        self.matrix.values[base + p] += f * self.mass.values[scalar_start + p];
                    }
                }
            }
        }
    }

    /// Newton on the tau slab from an explicitly chosen starting iterate
    /// (no continuation fallback).
    #[allow(clippy::too_many_arguments)]
    pub fn solve_step_from(
        &mut self,
        coeffs: &ModelCoefficients,
        phi_prev: &FEFunction,
        q_prev: &FEFunction,
        phi_start: &FEFunction,
        mu_start: &FEFunction,
        q_start: &FEFunction,
        tau: f64,
        cfg: &NewtonConfig,
    ) -> Result<(FEFunction, FEFunction, FEFunction, StepStats)> {
        self.newton_solve(
            coeffs, phi_prev, q_prev, phi_start, mu_start, q_start, tau, cfg,
        )
    }

    /// Damped Newton on the tau slab from an arbitrary iterate.
    #[allow(clippy::too_many_arguments)]
    fn newton_solve(
        &mut self,
        coeffs: &ModelCoefficients,
        phi_prev: &FEFunction,
        q_prev: &FEFunction,
        phi_start: &FEFunction,
        mu_start: &FEFunction,
        q_start: &FEFunction,
        tau: f64,
        cfg: &NewtonConfig,
    ) -> Result<(FEFunction, FEFunction, FEFunction, StepStats)> {
        assert!(tau > 0.0, "time step must be positive");
        let space = Arc::clone(&self.space);
        let m = space.dof_count;
        let tol = cfg.residual_tol / m as f64;

        let mut x = Vec::with_capacity(3 * m);
        x.extend_from_slice(&phi_start.coefficients);
        x.extend_from_slice(&mu_start.coefficients);
        x.extend_from_slice(&q_start.coefficients);

        let mut residual = vec![0.0f64; 3 * m];
        let mut trial = vec![0.0f64; 3 * m];
        let mut trial_res = vec![0.0f64; 3 * m];

        self.assemble(
            coeffs,
            &phi_prev.coefficients,
            &q_prev.coefficients,
            &x,
            tau,
            true,
            &mut residual,
        );
        let mut norm = inf_norm(&residual);
        let mut norm2 = two_norm(&residual);
        let mut history = vec![norm];
        let mut iterations = 0;
        // Levenberg-style shift sigma * M on the phi and q diagonal blocks,
        // engaged only when the plain Newton direction fails to descend and
        // annealed away afterwards so the terminal iterations are exact
        // Newton (the convergence test is always the unmodified residual).
        let mut sigma = 0.0f64;

        while norm > tol {
            if iterations >= cfg.max_iterations {
                return Err(Error::NewtonDiverged {
                    iterations,
                    residual: norm,
                    tolerance: tol,
                });
            }
            if sigma > 0.0 {
                self.add_mass_shift(sigma);
            }
            let fact = self.solver.factorize(&self.matrix)?;
            let mut delta = residual.clone();
            fact.solve_in_place(&mut delta);
            // One round of iterative refinement; the terminal Newton updates
            // otherwise stall one to two digits above the tolerance.
            {
                let mut correction = vec![0.0f64; 3 * m];
                self.matrix.matvec(&delta, &mut correction);
                for k in 0..3 * m {
                    correction[k] = residual[k] - correction[k];
                }
                fact.solve_in_place(&mut correction);
                for k in 0..3 * m {
                    delta[k] += correction[k];
                }
            }

            // Full step first; backtracking with up to 8 halvings when
            // damping is enabled. Sufficient decrease is measured in the
            // residual 2-norm (the infinity norm only gates convergence).
            let mut accepted = false;
            let mut scale = 1.0;
            let attempts = if cfg.damping { 9 } else { 1 };
            for _ in 0..attempts {
                for k in 0..3 * m {
                    trial[k] = x[k] - scale * delta[k];
                }
                self.assemble(
                    coeffs,
                    &phi_prev.coefficients,
                    &q_prev.coefficients,
                    &trial,
                    tau,
                    false,
                    &mut trial_res,
                );
                let trial_norm = inf_norm(&trial_res);
                let trial_norm2 = two_norm(&trial_res);
                let sufficient = trial_norm2 <= (1.0 - 1e-4 * scale) * norm2;
                if sufficient || trial_norm <= tol || !cfg.damping {
                    x.copy_from_slice(&trial);
                    norm = trial_norm;
                    norm2 = trial_norm2;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            iterations += 1;
            if accepted {
                sigma = if sigma > 1e-8 { 0.25 * sigma } else { 0.0 };
                history.push(norm);
            } else {
                // No descent along this direction: stiffen the shift and
                // retry from the same iterate.
                let next_sigma = if sigma == 0.0 { 1.0 } else { 10.0 * sigma };
                if next_sigma > 1e8 {
                    return Err(Error::NewtonDiverged {
                        iterations,
                        residual: norm,
                        tolerance: tol,
                    });
                }
                sigma = next_sigma;
            }
            if norm > tol {
                self.assemble(
                    coeffs,
                    &phi_prev.coefficients,
                    &q_prev.coefficients,
                    &x,
                    tau,
                    true,
                    &mut residual,
                );
                norm = inf_norm(&residual);
                norm2 = two_norm(&residual);
                if accepted {
                    *history.last_mut().unwrap() = norm;
                }
            }
        }

        let phi_next =
            FEFunction::from_coefficients(Arc::clone(&space), x[..m].to_vec());
        let mu_slab =
            FEFunction::from_coefficients(Arc::clone(&space), x[m..2 * m].to_vec());
        let q_next =
            FEFunction::from_coefficients(Arc::clone(&space), x[2 * m..].to_vec());
        Ok((
            phi_next,
            q_next,
            mu_slab,
            StepStats {
                iterations,
                final_residual: norm,
                residual_history: history,
            },
        ))
    }

    /// Adds `sigma * M` to the (phi, phi) and (q, q) diagonal blocks of the
    /// assembled Jacobian. The mass matrix shares the scalar adjacency, so
    /// its value array maps position-by-position into each block row.
    fn add_mass_shift(&mut self, sigma: f64) {
        let m = self.space.dof_count;
        for i in 0..m {
            let k_i = self.scalar_nnz[i];
            let scalar_start = self.mass.row_ptr[i];
            debug_assert_eq!(self.mass.row_ptr[i + 1] - scalar_start, k_i);
            let phi_base = self.matrix.row_ptr[i];
            let q_base = self.matrix.row_ptr[2 * m + i] + 2 * k_i;
            for p in 0..k_i {
                let v = sigma * self.mass.values[scalar_start + p];
                self.matrix.values[phi_base + p] += v;
                self.matrix.values[q_base + p] += v;
            }
        }
    }

    /// Matrix with the Jacobian values of the latest `assemble` call.
    pub fn jacobian(&self) -> &SparseMatrix {
        &self.matrix
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residual and exact Jacobian of the slab system at a given iterate
/// `x = [phi^n | mu_bar | q^n]` (3 * dof_count unknowns).
pub fn assemble_step_system(
    space: &Arc<FESpace>,
    coeffs: &ModelCoefficients,
    iterate: &[f64],
    phi_prev: &FEFunction,
    q_prev: &FEFunction,
    tau: f64,
) -> Result<(Vec<f64>, SparseMatrix)> {
    assert_eq!(iterate.len(), 3 * space.dof_count);
    let mut ctx = StepContext::new(space)?;
    let mut residual = vec![0.0f64; 3 * space.dof_count];
    ctx.assemble(
        coeffs,
        &phi_prev.coefficients,
        &q_prev.coefficients,
        iterate,
        tau,
        true,
        &mut residual,
    );
    Ok((residual, ctx.matrix))
}

/// One implicit time step from given nodal fields (standalone convenience
/// around [`StepContext`]; the chemical potential warm start is the L2
/// projection of f'(phi_prev)).
pub fn solve_time_step(
    space: &Arc<FESpace>,
    coeffs: &ModelCoefficients,
    phi_prev: &FEFunction,
    q_prev: &FEFunction,
    tau: f64,
    cfg: &NewtonConfig,
) -> Result<(FEFunction, FEFunction, FEFunction, StepStats)> {
    let mut ctx = StepContext::new(space)?;
    let mu_guess = ctx.mu_from_potential(coeffs, phi_prev)?;
    ctx.solve_step(coeffs, phi_prev, q_prev, &mu_guess, tau, cfg)
}

/// Runs N implicit steps from the given initial fields, recording per-step
/// structure diagnostics. Deterministic for identical inputs.
pub fn run_simulation(
    space: &Arc<FESpace>,
    coeffs: &ModelCoefficients,
    grid: TimeGrid,
    phi0: FEFunction,
    q0: FEFunction,
    cfg: &NewtonConfig,
) -> Result<Trajectory> {
    assert!(Arc::ptr_eq(&phi0.space, space) && Arc::ptr_eq(&q0.space, space));
    let tau = grid.tau();
    let mut ctx = StepContext::new(space)?;

    let mass_vec = mass_of(space, &phi0);
    let energy0 = energy(space, &phi0, &q0, coeffs);
    let mut diagnostics = vec![DiagnosticsRecord {
        step: 0,
        t: 0.0,
        mass: mass_vec,
        energy: energy0,
        dissipation: None,
        identity_residual: None,
        newton_iterations: 0,
    }];

    let mut phi_nodes = vec![phi0];
    let mut q_nodes = vec![q0];
    let mut mu_slabs: Vec<FEFunction> = Vec::with_capacity(grid.steps);

    for n in 1..=grid.steps {
        let mu_guess = match mu_slabs.last() {
            Some(mu) => mu.clone(),
            None => ctx
                .mu_from_potential(coeffs, &phi_nodes[0])
                .map_err(|e| Error::StepFailed {
                    step: n,
                    source: Box::new(e),
                })?,
        };
        let phi_prev = phi_nodes.last().unwrap().clone();
        let q_prev = q_nodes.last().unwrap().clone();
        let (phi_next, q_next, mu_slab, stats) = ctx
            .solve_step(coeffs, &phi_prev, &q_prev, &mu_guess, tau, cfg)
            .map_err(|e| Error::StepFailed {
                step: n,
                source: Box::new(e),
            })?;

        let phi_bar = phi_prev.midpoint(&phi_next);
        let q_bar = q_prev.midpoint(&q_next);
        let diss = dissipation(space, &phi_bar, &mu_slab, &q_bar, coeffs);
        let e_prev = diagnostics.last().unwrap().energy;
        let e_next = energy(space, &phi_next, &q_next, coeffs);
        diagnostics.push(DiagnosticsRecord {
            step: n,
            t: grid.node(n),
            mass: mass_of(space, &phi_next),
            energy: e_next,
            dissipation: Some(diss),
            identity_residual: Some((e_next - e_prev + tau * diss).abs()),
            newton_iterations: stats.iterations,
        });

        phi_nodes.push(phi_next);
        q_nodes.push(q_next);
        mu_slabs.push(mu_slab);
    }

    Ok(Trajectory {
        space: Arc::clone(space),
        coeffs: coeffs.clone(),
        grid,
        phi_nodes,
        q_nodes,
        mu_slabs,
        diagnostics,
    })
}

fn mass_of(space: &FESpace, phi: &FEFunction) -> f64 {
    crate::fem::functional(space, crate::fem::FunctionalKind::Integral, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{functional, project, FnField, FunctionalKind, ProjectionKind};
    use crate::mesh::build_periodic_unit_square_mesh;
    use crate::model::CoefficientFamily;
    use std::f64::consts::PI;

    fn space(n: usize) -> Arc<FESpace> {
        FESpace::new(Arc::new(build_periodic_unit_square_mesh(n).unwrap()))
    }

    fn exp1() -> ModelCoefficients {
        CoefficientFamily::experiment1().build()
    }

    fn smooth_initial(s: &Arc<FESpace>) -> (FEFunction, FEFunction) {
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
        let q0 = project(
            s,
            ProjectionKind::L2,
            &FnField {
                value: |x: f64, y: f64| 0.01 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
                gradient: |x: f64, y: f64| {
                    let k = 2.0 * PI;
                    [
                        0.01 * k * (k * x).cos() * (k * y).sin(),
                        0.01 * k * (k * x).sin() * (k * y).cos(),
                    ]
                },
            },
        )
        .unwrap();
        (phi0, q0)
    }

    #[test]
    fn steady_state_is_fixed_point() {
        // f'(0.5) = 0 by the (2 phi - 1) factor, so the uniform state is a
        // discrete steady state with mu = 0.
        let s = space(4);
        let c = exp1();
        let phi = FEFunction::constant(Arc::clone(&s), 0.5);
        let q = FEFunction::zeros(Arc::clone(&s));
        let (phi1, q1, mu, stats) =
            solve_time_step(&s, &c, &phi, &q, 0.1, &NewtonConfig::default()).unwrap();
        for v in &mu.coefficients {
            assert!(v.abs() < 1e-12, "mu = {v}");
        }
        for (a, b) in phi1.coefficients.iter().zip(&phi.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }
        for v in &q1.coefficients {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(stats.iterations, 0, "warm start already solves the slab");
    }

    #[test]
    fn step_conserves_mass() {
        let s = space(4);
        let c = exp1();
        let (phi0, q0) = smooth_initial(&s);
        let m0 = functional(&s, FunctionalKind::Integral, &phi0);
        let (phi1, _, _, _) =
            solve_time_step(&s, &c, &phi0, &q0, 0.05, &NewtonConfig::default()).unwrap();
        let m1 = functional(&s, FunctionalKind::Integral, &phi1);
        assert!((m1 - m0).abs() <= 1e-12, "mass drift {}", (m1 - m0).abs());
    }

    #[test]
    fn first_step_energy_identity() {
        let s = space(8);
        let c = exp1();
        let (phi0, q0) = smooth_initial(&s);
        let cfg = NewtonConfig::default();
        let tau = 1.0 / 8.0;
        let (phi1, q1, mu, _) = solve_time_step(&s, &c, &phi0, &q0, tau, &cfg).unwrap();
        let e0 = energy(&s, &phi0, &q0, &c);
        let e1 = energy(&s, &phi1, &q1, &c);
        let diss = dissipation(&s, &phi0.midpoint(&phi1), &mu, &q0.midpoint(&q1), &c);
        let defect = (e1 - e0 + tau * diss).abs();
        assert!(
            defect <= 10.0 * cfg.residual_tol,
            "energy identity defect {defect:.3e}"
        );
        assert!(diss >= 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = space(3);
        let c = exp1();
        let m = s.dof_count;
        let (phi0, q0) = smooth_initial(&s);
        let tau = 0.02;

        // A deterministic "random" iterate near the initial state.
        let mut state = 0x2545f4914f6cdd1du64;
        let mut rand = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut x = Vec::with_capacity(3 * m);
        for i in 0..3 * m {
            let base = if i < m {
                phi0.coefficients[i]
            } else if i < 2 * m {
                0.0
            } else {
                q0.coefficients[i - 2 * m]
            };
            x.push(base + 0.1 * rand());
        }

        let (_, jac) = assemble_step_system(&s, &c, &x, &phi0, &q0, tau).unwrap();
        assert!(jac.is_structurally_symmetric());

        // Column-by-column central differences of the residual.
        let mut ctx = StepContext::new(&s).unwrap();
        let h = 1e-6;
        let mut rp = vec![0.0; 3 * m];
        let mut rm = vec![0.0; 3 * m];
        let mut max_entry = 0.0f64;
        for k in jac.values.iter() {
            max_entry = max_entry.max(k.abs());
        }
        let mut worst = 0.0f64;
        for j in 0..3 * m {
            let mut xp = x.clone();
            xp[j] += h;
            ctx.assemble(&c, &phi0.coefficients, &q0.coefficients, &xp, tau, false, &mut rp);
            let mut xm = x.clone();
            xm[j] -= h;
            ctx.assemble(&c, &phi0.coefficients, &q0.coefficients, &xm, tau, false, &mut rm);
            for i in 0..3 * m {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                let an = jac.value_index(i, j).map(|p| jac.values[p]).unwrap_or(0.0);
                worst = worst.max((fd - an).abs());
            }
        }
        let rel = worst / max_entry;
        assert!(rel <= 1e-5, "Jacobian FD relative mismatch {rel:.3e}");
    }

    #[test]
    fn simulation_is_deterministic_and_dissipative() {
        let s = space(4);
        let c = exp1();
        let (phi0, q0) = smooth_initial(&s);
        let grid = TimeGrid::new(0.2, 4).unwrap();
        let cfg = NewtonConfig::default();
        let t1 = run_simulation(&s, &c, grid, phi0.clone(), q0.clone(), &cfg).unwrap();
        let t2 = run_simulation(&s, &c, grid, phi0, q0, &cfg).unwrap();

        for (a, b) in t1.phi_nodes.iter().zip(&t2.phi_nodes) {
            assert_eq!(a.coefficients, b.coefficients, "bitwise reproducibility");
        }
        for (a, b) in t1.mu_slabs.iter().zip(&t2.mu_slabs) {
            assert_eq!(a.coefficients, b.coefficients);
        }

        let energies: Vec<f64> = t1.diagnostics.iter().map(|d| d.energy).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "energy must not increase: {w:?}");
        }
        let mass0 = t1.diagnostics[0].mass;
        for d in &t1.diagnostics {
            assert!((d.mass - mass0).abs() <= 1e-10 * (1.0 + mass0.abs()));
            if let Some(r) = d.identity_residual {
                assert!(r <= 1e-8 * (1.0 + energies[0].abs()));
            }
        }
    }

    #[test]
    fn newton_converges_superlinearly_on_smooth_step() {
        let s = space(8);
        let c = exp1();
        let (phi0, q0) = smooth_initial(&s);
        // Cold chemical-potential start and a sizable step so several Newton
        // iterations are needed.
        let mut ctx = StepContext::new(&s).unwrap();
        let mu_guess = FEFunction::zeros(Arc::clone(&s));
        let cfg = NewtonConfig::default();
        let (_, _, _, stats) = ctx
            .solve_step(&c, &phi0, &q0, &mu_guess, 0.125, &cfg)
            .unwrap();
        let h = &stats.residual_history;
        assert!(h.len() >= 3, "history too short: {h:?}");
        let tail = &h[h.len() - 3..];
        assert!(
            tail[1] < tail[0] / 50.0 && tail[2] < tail[1] / 50.0,
            "no superlinear decrease in {h:?}"
        );
    }

    #[test]
    fn diverging_step_reports_error() {
        let s = space(3);
        let c = exp1();
        let (phi0, q0) = smooth_initial(&s);
        let cfg = NewtonConfig {
            max_iterations: 1,
            ..NewtonConfig::default()
        };
        // A single undamped-budget iteration from a zero warm start cannot
        // reach the tolerance (plain Newton entry point, no fallbacks).
        let mut ctx = StepContext::new(&s).unwrap();
        let mu_guess = FEFunction::zeros(Arc::clone(&s));
        let err = ctx
            .solve_step_from(&c, &phi0, &q0, &phi0, &mu_guess, &q0, 10.0, &cfg)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reducing the time step"), "got: {msg}");
    }
}
