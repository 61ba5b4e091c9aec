//! P2 Lagrange finite elements on a periodic mesh.
//!
//! Degrees of freedom are numbered vertices first, then edge midpoints, so
//! `dof_count = V + E = 4 n^2`. All integrals in the crate (assembly, norms,
//! energies, dissipation) use the one quadrature rule stored in the space;
//! this shared-rule convention is what the stepper's exact discrete energy
//! identity is stated against.

pub mod basis;
pub mod quadrature;
pub mod solver;
pub mod sparse;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::PeriodicMesh;
use basis::N_LOCAL;
use quadrature::QuadRule;
use sparse::SparseMatrix;

/// Per-element affine geometry: area and the physical gradients of the three
/// barycentric coordinate functions.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

/// P2 Lagrange space over a [`PeriodicMesh`].
pub struct FESpace {
    pub mesh: Arc<PeriodicMesh>,
    pub dof_count: usize,
    /// Global DOF indices per triangle: 3 vertices, then the 3 edge midpoints
    /// (edge k opposite local vertex k).
    pub element_dofs: Vec<[usize; N_LOCAL]>,
    /// The single quadrature rule used for every integral on this space.
    pub quad: QuadRule,
    geom: Vec<ElementGeometry>,
    /// Shape values at each quadrature point (element-independent).
    qvals: Vec<[f64; N_LOCAL]>,
    /// Physical shape gradients, indexed `el * nq + q`.
    qgrads: Vec<[[f64; 2]; N_LOCAL]>,
    /// Physical quadrature point coordinates (unwrapped chart), `el * nq + q`.
    qpoints: Vec<[f64; 2]>,
    /// Sorted DOF adjacency, one row per DOF.
    scalar_cols: Vec<Vec<usize>>,
    /// Representative coordinates of each DOF node in [0,1)^2.
    dof_coords: Vec<[f64; 2]>,
}

/// Which Gram matrix to assemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    Mass,
    Stiffness,
}

/// Which orthogonal projection to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    L2,
    H1,
}

/// Scalar functionals of a finite element function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionalKind {
    Integral,
    L2Norm,
    H1Seminorm,
}

/// A pointwise-evaluable field with gradient, defined on the periodic unit
/// square (it may be evaluated at unwrapped coordinates slightly beyond 1).
pub trait Field {
    fn value(&self, x: f64, y: f64) -> f64;
    fn gradient(&self, x: f64, y: f64) -> [f64; 2];
}

/// Field built from closures.
pub struct FnField<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V: Fn(f64, f64) -> f64, G: Fn(f64, f64) -> [f64; 2]> Field for FnField<V, G> {
    fn value(&self, x: f64, y: f64) -> f64 {
        (self.value)(x, y)
    }
    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        (self.gradient)(x, y)
    }
}

impl std::fmt::Debug for FESpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FESpace")
            .field("n", &self.mesh.n)
            .field("dof_count", &self.dof_count)
            .finish_non_exhaustive()
    }
}

/// Coefficient vector over a space; P2 Lagrange, so coefficients are nodal
/// values.
#[derive(Clone, Debug)]
pub struct FEFunction {
    pub space: Arc<FESpace>,
    pub coefficients: Vec<f64>,
}

impl FESpace {
    pub fn new(mesh: Arc<PeriodicMesh>) -> Arc<FESpace> {
        let nv = mesh.vertex_count();
        let ne = mesh.edge_count();
        let nel = mesh.triangle_count();
        let dof_count = nv + ne;

        // Edge DOFs: edge k of a triangle is the one opposite local vertex k,
        // i.e. the unique edge whose endpoints omit that vertex.
        let mut elem_edges = vec![[usize::MAX; 3]; nel];
        for (e, edge) in mesh.edges.iter().enumerate() {
            for &t in &edge.triangles {
                let tri = mesh.triangles[t];
                let k = (0..3)
                    .find(|&k| !edge.vertices.contains(&tri[k]))
                    .expect("edge endpoints must be two distinct triangle vertices");
                elem_edges[t][k] = e;
            }
        }

        let mut element_dofs = Vec::with_capacity(nel);
        for t in 0..nel {
            let tri = mesh.triangles[t];
            let ee = elem_edges[t];
            debug_assert!(ee.iter().all(|&e| e != usize::MAX));
            element_dofs.push([tri[0], tri[1], tri[2], nv + ee[0], nv + ee[1], nv + ee[2]]);
        }

        let mut geom = Vec::with_capacity(nel);
        for t in 0..nel {
            let [p0, p1, p2] = mesh.tri_coords[t];
            let b00 = p1[0] - p0[0];
            let b10 = p1[1] - p0[1];
            let b01 = p2[0] - p0[0];
            let b11 = p2[1] - p0[1];
            let det = b00 * b11 - b01 * b10;
            let gl1 = [b11 / det, -b01 / det];
            let gl2 = [-b10 / det, b00 / det];
            let gl0 = [-gl1[0] - gl2[0], -gl1[1] - gl2[1]];
            geom.push(ElementGeometry {
                area: 0.5 * det,
                grad_lambda: [gl0, gl1, gl2],
            });
        }

        let quad = QuadRule::triangle_degree6();
        let nq = quad.points.len();
        let qvals: Vec<[f64; N_LOCAL]> =
            quad.points.iter().map(|&p| basis::shape_values(p)).collect();

        let mut qgrads = Vec::with_capacity(nel * nq);
        let mut qpoints = Vec::with_capacity(nel * nq);
        for t in 0..nel {
            let gl = &geom[t].grad_lambda;
            let [p0, p1, p2] = mesh.tri_coords[t];
            for &bary in &quad.points {
                let gb = basis::shape_grads_bary(bary);
                let mut grads = [[0.0f64; 2]; N_LOCAL];
                for i in 0..N_LOCAL {
                    for k in 0..3 {
                        grads[i][0] += gb[i][k] * gl[k][0];
                        grads[i][1] += gb[i][k] * gl[k][1];
                    }
                }
                qgrads.push(grads);
                qpoints.push([
                    bary[0] * p0[0] + bary[1] * p1[0] + bary[2] * p2[0],
                    bary[0] * p0[1] + bary[1] * p1[1] + bary[2] * p2[1],
                ]);
            }
        }

        let mut scalar_cols = vec![Vec::new(); dof_count];
        for dofs in &element_dofs {
            for &i in dofs {
                for &j in dofs {
                    scalar_cols[i].push(j);
                }
            }
        }
        for cols in &mut scalar_cols {
            cols.sort_unstable();
            cols.dedup();
        }

        let mut dof_coords = Vec::with_capacity(dof_count);
        dof_coords.extend_from_slice(&mesh.vertices);
        for e in 0..ne {
            dof_coords.push(mesh.edge_midpoint(e));
        }

        Arc::new(FESpace {
            mesh,
            dof_count,
            element_dofs,
            quad,
            geom,
            qvals,
            qgrads,
            qpoints,
            scalar_cols,
            dof_coords,
        })
    }

    pub fn element_count(&self) -> usize {
        self.element_dofs.len()
    }

    pub fn quad_point_count(&self) -> usize {
        self.quad.points.len()
    }

    pub fn element_area(&self, el: usize) -> f64 {
        self.geom[el].area
    }

    pub fn geometry(&self, el: usize) -> &ElementGeometry {
        &self.geom[el]
    }

    /// Shape values at quadrature point `q` (element-independent).
    #[inline]
    pub fn shape_at(&self, q: usize) -> &[f64; N_LOCAL] {
        &self.qvals[q]
    }

    /// Physical shape gradients at quadrature point `q` of element `el`.
    #[inline]
    pub fn shape_grad_at(&self, el: usize, q: usize) -> &[[f64; 2]; N_LOCAL] {
        &self.qgrads[el * self.quad.points.len() + q]
    }

    /// Physical coordinates of quadrature point `q` of element `el`.
    #[inline]
    pub fn quad_point(&self, el: usize, q: usize) -> [f64; 2] {
        self.qpoints[el * self.quad.points.len() + q]
    }

    /// Representative coordinate of a global DOF node.
    pub fn dof_coord(&self, dof: usize) -> [f64; 2] {
        self.dof_coords[dof]
    }

    /// Sorted DOF-to-DOF adjacency (shared-element coupling).
    pub fn scalar_adjacency(&self) -> &[Vec<usize>] {
        &self.scalar_cols
    }

    /// Zero matrix over the scalar coupling pattern.
    pub fn scalar_matrix(&self) -> SparseMatrix {
        SparseMatrix::from_pattern(self.dof_count, self.dof_count, &self.scalar_cols)
    }
}

/// Assembles the mass or stiffness Gram matrix of the space.
pub fn assemble_matrix(space: &FESpace, kind: MatrixKind) -> SparseMatrix {
    let mut m = space.scalar_matrix();
    let nq = space.quad_point_count();
    let mut local = [[0.0f64; N_LOCAL]; N_LOCAL];
    for el in 0..space.element_count() {
        let area = space.element_area(el);
        for row in local.iter_mut() {
            row.fill(0.0);
        }
        for q in 0..nq {
            let w = space.quad.weights[q] * area;
            match kind {
                MatrixKind::Mass => {
                    let vals = space.shape_at(q);
                    for i in 0..N_LOCAL {
                        let wi = w * vals[i];
                        for j in 0..N_LOCAL {
                            local[i][j] += wi * vals[j];
                        }
                    }
                }
                MatrixKind::Stiffness => {
                    let grads = space.shape_grad_at(el, q);
                    for i in 0..N_LOCAL {
                        for j in 0..N_LOCAL {
                            local[i][j] +=
                                w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                        }
                    }
                }
            }
        }
        let dofs = &space.element_dofs[el];
        for i in 0..N_LOCAL {
            for j in 0..N_LOCAL {
                m.add(dofs[i], dofs[j], local[i][j]);
            }
        }
    }
    m
}

impl FEFunction {
    pub fn zeros(space: Arc<FESpace>) -> Self {
        let n = space.dof_count;
        FEFunction {
            space,
            coefficients: vec![0.0; n],
        }
    }

    pub fn constant(space: Arc<FESpace>, c: f64) -> Self {
        let n = space.dof_count;
        FEFunction {
            space,
            coefficients: vec![c; n],
        }
    }

    pub fn from_coefficients(space: Arc<FESpace>, coefficients: Vec<f64>) -> Self {
        assert_eq!(coefficients.len(), space.dof_count);
        FEFunction {
            space,
            coefficients,
        }
    }

    /// `a * self + b * other`, on the shared space.
    pub fn combine(&self, a: f64, other: &FEFunction, b: f64) -> FEFunction {
        assert!(Arc::ptr_eq(&self.space, &other.space));
        let coefficients = self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(x, y)| a * x + b * y)
            .collect();
        FEFunction {
            space: Arc::clone(&self.space),
            coefficients,
        }
    }

    /// Midpoint average `(self + other) / 2`.
    pub fn midpoint(&self, other: &FEFunction) -> FEFunction {
        self.combine(0.5, other, 0.5)
    }

    pub fn diff(&self, other: &FEFunction) -> FEFunction {
        self.combine(1.0, other, -1.0)
    }
}

/// Exact P2 evaluation of a function and its gradient at a barycentric point
/// of an element.
pub fn evaluate(fun: &FEFunction, element: usize, bary: [f64; 3]) -> Result<(f64, [f64; 2])> {
    let space = &fun.space;
    if element >= space.element_count() {
        return Err(Error::ElementOutOfRange {
            element,
            count: space.element_count(),
        });
    }
    let vals = basis::shape_values(bary);
    let gb = basis::shape_grads_bary(bary);
    let gl = &space.geom[element].grad_lambda;
    let dofs = &space.element_dofs[element];
    let mut v = 0.0;
    let mut g = [0.0f64; 2];
    for i in 0..N_LOCAL {
        let c = fun.coefficients[dofs[i]];
        v += c * vals[i];
        for k in 0..3 {
            g[0] += c * gb[i][k] * gl[k][0];
            g[1] += c * gb[i][k] * gl[k][1];
        }
    }
    Ok((v, g))
}

/// L2- or H1-orthogonal projection of a pointwise field onto the space.
pub fn project<F: Field + ?Sized>(
    space: &Arc<FESpace>,
    kind: ProjectionKind,
    field: &F,
) -> Result<FEFunction> {
    let mass = assemble_matrix(space, MatrixKind::Mass);
    let matrix = match kind {
        ProjectionKind::L2 => mass,
        ProjectionKind::H1 => {
            let stiff = assemble_matrix(space, MatrixKind::Stiffness);
            let mut m = mass;
            for (v, s) in m.values.iter_mut().zip(&stiff.values) {
                *v += s;
            }
            m
        }
    };

    let nq = space.quad_point_count();
    let mut rhs = vec![0.0f64; space.dof_count];
    for el in 0..space.element_count() {
        let area = space.element_area(el);
        let dofs = &space.element_dofs[el];
        for q in 0..nq {
            let w = space.quad.weights[q] * area;
            let [x, y] = space.quad_point(el, q);
            let fv = field.value(x, y);
            let vals = space.shape_at(q);
            match kind {
                ProjectionKind::L2 => {
                    for i in 0..N_LOCAL {
                        rhs[dofs[i]] += w * fv * vals[i];
                    }
                }
                ProjectionKind::H1 => {
                    let fg = field.gradient(x, y);
                    let grads = space.shape_grad_at(el, q);
                    for i in 0..N_LOCAL {
                        rhs[dofs[i]] += w
                            * (fv * vals[i] + fg[0] * grads[i][0] + fg[1] * grads[i][1]);
                    }
                }
            }
        }
    }

    let coefficients = solver::solve_sparse(&matrix, &rhs)?;
    Ok(FEFunction::from_coefficients(Arc::clone(space), coefficients))
}

/// Exact transfer of a coarse function into the P2 space on the red
/// refinement of its mesh (nested spaces, so this is an identity on
/// functions).
pub fn prolong(coarse: &FEFunction, fine_space: &Arc<FESpace>) -> Result<FEFunction> {
    let info = fine_space
        .mesh
        .refinement
        .as_ref()
        .ok_or(Error::NotRefinementPair)?;
    if !Arc::ptr_eq(&info.parent, &coarse.space.mesh) {
        return Err(Error::NotRefinementPair);
    }

    let mut coefficients = vec![0.0f64; fine_space.dof_count];
    let mut have = vec![false; fine_space.dof_count];
    for ft in 0..fine_space.element_count() {
        let pt = info.parent_of_child[ft];
        let fine_coords = fine_space.mesh.tri_coords[ft];
        let parent_coords = coarse.space.mesh.tri_coords[pt];
        let dofs = &fine_space.element_dofs[ft];
        for (loc, &g) in dofs.iter().enumerate() {
            if have[g] {
                continue;
            }
            let nb = basis::LOCAL_NODES[loc];
            let x = nb[0] * fine_coords[0][0] + nb[1] * fine_coords[1][0] + nb[2] * fine_coords[2][0];
            let y = nb[0] * fine_coords[0][1] + nb[1] * fine_coords[1][1] + nb[2] * fine_coords[2][1];
            let bary = barycentric(&parent_coords, x, y);
            let (v, _) = evaluate(coarse, pt, bary)?;
            coefficients[g] = v;
            have[g] = true;
        }
    }
    debug_assert!(have.iter().all(|&b| b));
    Ok(FEFunction::from_coefficients(
        Arc::clone(fine_space),
        coefficients,
    ))
}

/// Barycentric coordinates of (x, y) with respect to an unwrapped coordinate
/// triple.
pub fn barycentric(coords: &[[f64; 2]; 3], x: f64, y: f64) -> [f64; 3] {
    let [p0, p1, p2] = coords;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let l1 = ((x - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (y - p0[1])) / det;
    let l2 = ((p1[0] - p0[0]) * (y - p0[1]) - (x - p0[0]) * (p1[1] - p0[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Integral, L2 norm, or H1 seminorm of a member of the space, evaluated with
/// the space's quadrature rule (exact for P2 data).
pub fn functional(space: &FESpace, kind: FunctionalKind, fun: &FEFunction) -> f64 {
    assert!(
        std::ptr::eq(Arc::as_ptr(&fun.space), space),
        "function does not belong to this space"
    );
    let nq = space.quad_point_count();
    let mut acc = 0.0f64;
    for el in 0..space.element_count() {
        let area = space.element_area(el);
        let dofs = &space.element_dofs[el];
        let mut local = [0.0f64; N_LOCAL];
        for i in 0..N_LOCAL {
            local[i] = fun.coefficients[dofs[i]];
        }
        for q in 0..nq {
            let w = space.quad.weights[q] * area;
            match kind {
                FunctionalKind::Integral | FunctionalKind::L2Norm => {
                    let vals = space.shape_at(q);
                    let mut v = 0.0;
                    for i in 0..N_LOCAL {
                        v += local[i] * vals[i];
                    }
                    acc += if matches!(kind, FunctionalKind::Integral) {
                        w * v
                    } else {
                        w * v * v
                    };
                }
                FunctionalKind::H1Seminorm => {
                    let grads = space.shape_grad_at(el, q);
                    let mut g = [0.0f64; 2];
                    for i in 0..N_LOCAL {
                        g[0] += local[i] * grads[i][0];
                        g[1] += local[i] * grads[i][1];
                    }
                    acc += w * (g[0] * g[0] + g[1] * g[1]);
                }
            }
        }
    }
    match kind {
        FunctionalKind::Integral => acc,
        _ => acc.sqrt(),
    }
}

/// Squared full H1 norm of a function: `||f||_0^2 + |f|_1^2`.
pub fn h1_norm_squared(space: &FESpace, fun: &FEFunction) -> f64 {
    let l2 = functional(space, FunctionalKind::L2Norm, fun);
    let h1 = functional(space, FunctionalKind::H1Seminorm, fun);
    l2 * l2 + h1 * h1
}
