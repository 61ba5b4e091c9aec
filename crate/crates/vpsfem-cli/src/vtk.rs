//! Legacy ASCII VTK snapshots. Every P2 triangle is emitted as 4 linear
//! sub-triangles through its edge midpoints, with per-element unwrapped
//! coordinates so the periodic seam renders without wraparound artifacts
//! (seam points are duplicated on purpose).

use std::io::Write;
use std::path::Path;

use vpsfem::fem::{FEFunction, FESpace};

use crate::CliError;

/// Local node order per element: 3 corners, then the midpoints opposite each
/// corner; sub-triangles reference these 6 points.
const SUB_TRIANGLES: [[usize; 3]; 4] = [[0, 5, 4], [1, 3, 5], [2, 4, 3], [5, 3, 4]];

pub fn render_snapshot_vtk(
    space: &FESpace,
    phi: &FEFunction,
    q: &FEFunction,
    mu: &FEFunction,
) -> String {
    let nel = space.element_count();
    let npoints = 6 * nel;
    let ncells = 4 * nel;

    let mut out = String::with_capacity(npoints * 64);
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("viscoelastic phase separation snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");

    out.push_str(&format!("POINTS {npoints} double\n"));
    for el in 0..nel {
        let coords = space.mesh.tri_coords[el];
        // Corners, then midpoints of (1,2), (2,0), (0,1).
        let mids = [
            [
                0.5 * (coords[1][0] + coords[2][0]),
                0.5 * (coords[1][1] + coords[2][1]),
            ],
            [
                0.5 * (coords[2][0] + coords[0][0]),
                0.5 * (coords[2][1] + coords[0][1]),
            ],
            [
                0.5 * (coords[0][0] + coords[1][0]),
                0.5 * (coords[0][1] + coords[1][1]),
            ],
        ];
        for p in coords.iter().chain(mids.iter()) {
            out.push_str(&format!("{:.16e} {:.16e} 0\n", p[0], p[1]));
        }
    }

    out.push_str(&format!("CELLS {ncells} {}\n", 4 * ncells));
    for el in 0..nel {
        let base = 6 * el;
        for tri in SUB_TRIANGLES {
            out.push_str(&format!(
                "3 {} {} {}\n",
                base + tri[0],
                base + tri[1],
                base + tri[2]
            ));
        }
    }

    out.push_str(&format!("CELL_TYPES {ncells}\n"));
    for _ in 0..ncells {
        out.push_str("5\n");
    }

    out.push_str(&format!("POINT_DATA {npoints}\n"));
    for (name, fun) in [("phi", phi), ("q", q), ("mu", mu)] {
        out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
        for el in 0..nel {
            for &dof in &space.element_dofs[el] {
                out.push_str(&format!("{:.16e}\n", fun.coefficients[dof]));
            }
        }
    }
    out
}

pub fn write_snapshot_vtk(
    path: &Path,
    space: &FESpace,
    phi: &FEFunction,
    q: &FEFunction,
    mu: &FEFunction,
) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(render_snapshot_vtk(space, phi, q, mu).as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
