//! Quadratic Lagrange shape functions on the reference triangle.
//!
//! Local DOF ordering: the three vertex functions first, then the three
//! edge-midpoint functions, where edge k is the edge opposite vertex k
//! (edge 0 = midpoint of (v1,v2), edge 1 = (v2,v0), edge 2 = (v0,v1)).

/// Number of local P2 degrees of freedom per triangle.
pub const N_LOCAL: usize = 6;

/// Shape function values at barycentric coordinates `l`.
#[inline]
pub fn shape_values(l: [f64; 3]) -> [f64; N_LOCAL] {
    let [l0, l1, l2] = l;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l0,
        4.0 * l0 * l1,
    ]
}

/// Partial derivatives of the shape functions with respect to the three
/// barycentric coordinates: `grads[i][k] = dN_i / d lambda_k`.
#[inline]
pub fn shape_grads_bary(l: [f64; 3]) -> [[f64; 3]; N_LOCAL] {
    let [l0, l1, l2] = l;
    [
        [4.0 * l0 - 1.0, 0.0, 0.0],
        [0.0, 4.0 * l1 - 1.0, 0.0],
        [0.0, 0.0, 4.0 * l2 - 1.0],
        [0.0, 4.0 * l2, 4.0 * l1],
        [4.0 * l2, 0.0, 4.0 * l0],
        [4.0 * l1, 4.0 * l0, 0.0],
    ]
}

/// Barycentric coordinates of the 6 local nodes (vertices, then opposite-edge
/// midpoints), matching the local DOF ordering.
pub const LOCAL_NODES: [[f64; 3]; N_LOCAL] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_property() {
        for (i, &node) in LOCAL_NODES.iter().enumerate() {
            let vals = shape_values(node);
            for (j, &v) in vals.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-15, "N_{j} at node {i}: {v}");
            }
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let pts = [
            [0.2, 0.3, 0.5],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.9, 0.05, 0.05],
            [0.0, 0.25, 0.75],
        ];
        for l in pts {
            let vals = shape_values(l);
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);

            // Sum of all shape functions is identically 1 on the simplex; the
            // per-direction barycentric derivative sums are then equal (each
            // 3), which makes the physical gradient vanish since the
            // barycentric coordinate gradients themselves sum to zero.
            let grads = shape_grads_bary(l);
            let sums: Vec<f64> = (0..3)
                .map(|k| grads.iter().map(|row| row[k]).sum())
                .collect();
            for k in 1..3 {
                assert!((sums[k] - sums[0]).abs() < 1e-14);
            }
        }
    }
}
