//! Quadrature rules: one fixed triangle rule shared by every integral in the
//! crate, plus the 3-point Gauss rule in time used by the stepper.
//!
//! A single spatial rule for assembly, energies, and dissipation is what makes
//! the discrete energy identity hold at the quadrature-defined level: all
//! functionals see exactly the same pointwise integrands.

/// Quadrature rule on the reference triangle in barycentric coordinates.
///
/// Weights sum to 1; the integral over an element K is
/// `|K| * sum_i w_i f(x_i)`.
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Highest polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadRule {
    /// 12-point degree-6 rule (Dunavant). All weights positive.
    pub fn triangle_degree6() -> Self {
        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);

        let mut orbit3 = |w: f64, a: f64, b: f64| {
            for p in [[a, b, b], [b, a, b], [b, b, a]] {
                points.push(p);
                weights.push(w);
            }
        };
        orbit3(0.116786275726379, 0.501426509658179, 0.249286745170910);
        orbit3(0.050844906370207, 0.873821971016996, 0.063089014491502);

        let (w, a, b, c) = (
            0.082851075618374,
            0.053145049844816,
            0.310352451033785,
            0.636502499121399,
        );
        for p in [
            [a, b, c],
            [a, c, b],
            [b, a, c],
            [b, c, a],
            [c, a, b],
            [c, b, a],
        ] {
            points.push(p);
            weights.push(w);
        }

        QuadRule {
            points,
            weights,
            degree: 6,
        }
    }
}

/// 3-point Gauss-Legendre nodes and weights on [0,1] (exact through degree 5).
///
/// Used for the time integral of f'(phi(t)) along the linear-in-time path; for
/// quartic potentials the integrand has degree 3 in t, so this is exact.
pub fn time_gauss_3() -> [(f64, f64); 3] {
    let s = (0.6f64).sqrt() * 0.5;
    [
        (0.5 - s, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 + s, 5.0 / 18.0),
    ]
}
