//! Uniform triangulations of the unit square identified as a torus.
//!
//! The mesh is an n-by-n grid of square cells, each split into two triangles
//! by its lower-left to upper-right diagonal. Under periodic identification
//! the entity counts are V = n^2 vertices, E = 3n^2 edges, F = 2n^2 triangles,
//! so the Euler characteristic V - E + F is 0 as required on a torus, and
//! every edge is shared by exactly two triangles.
//!
//! Indexing is deterministic and arithmetic throughout (no hashing):
//! - vertex (i, j) has index `j*n + i`,
//! - cell (i, j) has index `c = j*n + i`,
//! - the horizontal, vertical, and diagonal edge anchored at cell c have
//!   indices `3c`, `3c + 1`, `3c + 2`,
//! - the lower and upper triangle of cell c have indices `2c` and `2c + 1`.
//!
//! Vertex coordinates are stored as representatives in [0,1)^2. Each triangle
//! additionally stores an unwrapped copy of its corner coordinates (period
//! shifts resolved), which is what all geometric computations use.

use std::sync::Arc;

use crate::error::{Error, Result};

/// An edge of the periodic triangulation: its endpoint vertex indices and the
/// two triangles incident to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

/// Records how a refined mesh relates to the mesh it was refined from.
#[derive(Clone, Debug)]
pub struct RefinementInfo {
    /// The mesh this one is the red refinement of.
    pub parent: Arc<PeriodicMesh>,
    /// For each child triangle, the index of the parent triangle containing it.
    pub parent_of_child: Vec<usize>,
}

/// Conforming triangulation of the unit torus.
#[derive(Clone, Debug)]
pub struct PeriodicMesh {
    /// Cells per axis.
    pub n: usize,
    /// Vertex representatives in [0,1)^2, lexicographic by grid index.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex-index triples, positively oriented.
    pub triangles: Vec<[usize; 3]>,
    /// Unwrapped corner coordinates per triangle (period shifts resolved).
    pub tri_coords: Vec<[[f64; 2]; 3]>,
    /// Edge list; edge k carries its endpoints and both incident triangles.
    pub edges: Vec<Edge>,
    /// Mesh size: length of the longest edge (the cell diagonal), sqrt(2)/n.
    pub h: f64,
    /// Present when this mesh was produced by [`refine_uniform`].
    pub refinement: Option<RefinementInfo>,
}

impl PeriodicMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Signed area of triangle `t`, computed from its unwrapped coordinates.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.tri_coords[t];
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Representative coordinate in [0,1)^2 of the midpoint of edge `e`.
    ///
    /// Edge DOF placement relies on this being the true geometric midpoint of
    /// the unwrapped edge, wrapped back into the fundamental domain.
    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let n = self.n as f64;
        let c = e / 3;
        let i = (c % self.n) as f64;
        let j = (c / self.n) as f64;
        match e % 3 {
            0 => [(i + 0.5) / n, j / n],
            1 => [i / n, (j + 0.5) / n],
            _ => [(i + 0.5) / n, (j + 0.5) / n],
        }
    }
}

#[inline]
fn vidx(n: usize, i: usize, j: usize) -> usize {
    (j % n) * n + (i % n)
}

/// Build the n-by-n periodic triangulation of the unit square.
///
/// Every cell is split by its lower-left to upper-right diagonal, so the mesh
/// is quasi-uniform with a fixed shape constant. Rejects `n < 3`: under the
/// periodic identification two parallel edges of a 2-cell-wide strip connect
/// the same vertex pair, which makes edges ambiguous.
pub fn build_periodic_unit_square_mesh(n: usize) -> Result<PeriodicMesh> {
    if n < 3 {
        return Err(Error::MeshTooCoarse { n });
    }
    let nf = n as f64;

    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push([i as f64 / nf, j as f64 / nf]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    let mut tri_coords = Vec::with_capacity(2 * n * n);
    let mut edges = Vec::with_capacity(3 * n * n);

    for j in 0..n {
        for i in 0..n {
            let c = j * n + i;
            let (x0, x1) = (i as f64 / nf, (i + 1) as f64 / nf);
            let (y0, y1) = (j as f64 / nf, (j + 1) as f64 / nf);

            let a = vidx(n, i, j);
            let b = vidx(n, i + 1, j);
            let cc = vidx(n, i + 1, j + 1);
            let d = vidx(n, i, j + 1);

            // Lower triangle 2c: (a, b, cc); upper triangle 2c+1: (a, cc, d).
            triangles.push([a, b, cc]);
            tri_coords.push([[x0, y0], [x1, y0], [x1, y1]]);
            triangles.push([a, cc, d]);
            tri_coords.push([[x0, y0], [x1, y1], [x0, y1]]);

            let lower = |ci: usize, cj: usize| 2 * ((cj % n) * n + (ci % n));
            let upper = |ci: usize, cj: usize| 2 * ((cj % n) * n + (ci % n)) + 1;

            debug_assert_eq!(edges.len(), 3 * c);
            // Horizontal edge of cell c: shared by this cell's lower triangle
            // and the upper triangle of the cell below.
            edges.push(Edge {
                vertices: [a, b],
                triangles: [lower(i, j), upper(i, j + n - 1)],
            });
            // Vertical edge: this cell's upper triangle and the lower triangle
            // of the cell to the left.
            edges.push(Edge {
                vertices: [a, d],
                triangles: [upper(i, j), lower(i + n - 1, j)],
            });
            // Diagonal edge: both triangles of this cell.
            edges.push(Edge {
                vertices: [a, cc],
                triangles: [lower(i, j), upper(i, j)],
            });
        }
    }

    Ok(PeriodicMesh {
        n,
        vertices,
        triangles,
        tri_coords,
        edges,
        h: std::f64::consts::SQRT_2 / nf,
        refinement: None,
    })
}

/// Red refinement: every triangle splits into 4 via its edge midpoints.
///
/// For this uniform family the child mesh coincides with
/// `build_periodic_unit_square_mesh(2n)` including its deterministic ordering;
/// the returned mesh additionally records the parent-to-child element map.
pub fn refine_uniform(parent: &Arc<PeriodicMesh>) -> PeriodicMesh {
    let n = parent.n;
    let mut child = build_periodic_unit_square_mesh(2 * n)
        .expect("refinement of a valid mesh cannot be too coarse");

    // Child triangle (cell (ci,cj), lower/upper) sits inside a parent triangle
    // of cell (ci/2, cj/2) determined by the cell parity; see the geometric
    // case split below (L = lower, U = upper).
    let mut parent_of_child = vec![0usize; child.triangle_count()];
    for cj in 0..2 * n {
        for ci in 0..2 * n {
            let cc = cj * 2 * n + ci;
            let pc = (cj / 2) * n + ci / 2;
            let (a, b) = (ci % 2, cj % 2);
            // (parity_x, parity_y) -> (parent of child lower, parent of child upper)
            let (pl, pu) = match (a, b) {
                (0, 0) => (0, 1), // L->PL, U->PU  (corner at parent vertex 0)
                (1, 0) => (0, 0), // L->PL, U->PL  (right corner + center of PL)
                (1, 1) => (0, 1), // L->PL, U->PU  (top corners)
                (0, 1) => (1, 1), // L->PU, U->PU  (center + left corner of PU)
                _ => unreachable!(),
            };
            parent_of_child[2 * cc] = 2 * pc + pl;
            parent_of_child[2 * cc + 1] = 2 * pc + pu;
        }
    }

    child.refinement = Some(RefinementInfo {
        parent: Arc::clone(parent),
        parent_of_child,
    });
    child
}
