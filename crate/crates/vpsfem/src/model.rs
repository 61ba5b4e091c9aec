//! Problem-instance definition: coefficient functions with their derivatives,
//! the free energy, dissipation, and relative-energy functionals, and
//! validation of the structural assumptions on the coefficients.
//!
//! All functionals are evaluated with the space's shared quadrature rule; the
//! stepper's discrete energy identity is exact precisely because the energy,
//! the dissipation, and the Galerkin forms integrate identical pointwise
//! expressions.

use std::sync::Arc;

use crate::fem::{FEFunction, FESpace};

type DynFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar coefficient function bundled with its first derivative.
#[derive(Clone)]
pub struct ScalarFn1 {
    value: DynFn,
    d1: DynFn,
}

impl ScalarFn1 {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarFn1 {
            value: Arc::new(value),
            d1: Arc::new(d1),
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.value)(s)
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> f64 {
        (self.d1)(s)
    }
}

/// A scalar coefficient function with first and second derivatives.
#[derive(Clone)]
pub struct ScalarFn2 {
    value: DynFn,
    d1: DynFn,
    d2: DynFn,
}

impl ScalarFn2 {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarFn2 {
            value: Arc::new(value),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.value)(s)
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> f64 {
        (self.d1)(s)
    }

    #[inline]
    pub fn deriv2(&self, s: f64) -> f64 {
        (self.d2)(s)
    }
}

/// The parameter bundle defining one problem instance.
///
/// Carries the interface parameter gamma, the regularization epsilon, the
/// constant mobility d0, the phase-dependent mobilities b and c, the bulk
/// modulus A, the inverse relaxation time kappa, the double-well potential f,
/// the lower-bound constant `f_one` (f and f'' are bounded below by -f_one),
/// and the relative-energy shift alpha.
#[derive(Clone)]
pub struct ModelCoefficients {
    pub gamma: f64,
    pub epsilon: f64,
    pub d0: f64,
    pub mobility: ScalarFn1,
    pub cross_mobility: ScalarFn1,
    pub bulk_modulus: ScalarFn2,
    pub relaxation: ScalarFn1,
    pub potential: ScalarFn2,
    /// Nonnegative constant with f(s) >= -f_one and f''(s) >= -f_one on the
    /// derivation bracket.
    pub f_one: f64,
    /// Relative-energy convexification shift, f_one + 1 when auto-derived.
    pub alpha: f64,
    /// Clamping half-width applied to the argument of the cot-based bulk
    /// modulus presets.
    pub clamp_delta: f64,
}

impl ModelCoefficients {
    #[inline]
    pub fn b(&self, s: f64) -> f64 {
        self.mobility.eval(s)
    }
    #[inline]
    pub fn b_prime(&self, s: f64) -> f64 {
        self.mobility.deriv(s)
    }
    #[inline]
    pub fn c(&self, s: f64) -> f64 {
        self.cross_mobility.eval(s)
    }
    #[inline]
    pub fn c_prime(&self, s: f64) -> f64 {
        self.cross_mobility.deriv(s)
    }
    #[inline]
    pub fn a(&self, s: f64) -> f64 {
        self.bulk_modulus.eval(s)
    }
    #[inline]
    pub fn a_prime(&self, s: f64) -> f64 {
        self.bulk_modulus.deriv(s)
    }
    #[inline]
    pub fn a_second(&self, s: f64) -> f64 {
        self.bulk_modulus.deriv2(s)
    }
    #[inline]
    pub fn kappa(&self, s: f64) -> f64 {
        self.relaxation.eval(s)
    }
    #[inline]
    pub fn kappa_prime(&self, s: f64) -> f64 {
        self.relaxation.deriv(s)
    }
    #[inline]
    pub fn f(&self, s: f64) -> f64 {
        self.potential.eval(s)
    }
    #[inline]
    pub fn f_prime(&self, s: f64) -> f64 {
        self.potential.deriv(s)
    }
    #[inline]
    pub fn f_second(&self, s: f64) -> f64 {
        self.potential.deriv2(s)
    }

    /// Assembles a bundle from explicit coefficient functions, deriving
    /// `f_one` and `alpha` by minimizing f and f'' over `bracket`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        gamma: f64,
        epsilon: f64,
        d0: f64,
        mobility: ScalarFn1,
        cross_mobility: ScalarFn1,
        bulk_modulus: ScalarFn2,
        relaxation: ScalarFn1,
        potential: ScalarFn2,
        clamp_delta: f64,
        bracket: (f64, f64),
    ) -> Self {
        let min_f = minimize_scalar(|s| potential.eval(s), bracket);
        let min_f2 = minimize_scalar(|s| potential.deriv2(s), bracket);
        let f_one = (-min_f.min(min_f2)).max(0.0);
        ModelCoefficients {
            gamma,
            epsilon,
            d0,
            mobility,
            cross_mobility,
            bulk_modulus,
            relaxation,
            potential,
            f_one,
            alpha: f_one + 1.0,
            clamp_delta,
        }
    }
}

/// Dense sampling followed by ternary refinement around the best sample.
/// The quartic growth of the admissible potentials keeps the minimum interior.
fn minimize_scalar(f: impl Fn(f64) -> f64, (lo, hi): (f64, f64)) -> f64 {
    const SAMPLES: usize = 20_000;
    let step = (hi - lo) / SAMPLES as f64;
    let mut best_x = lo;
    let mut best = f(lo);
    for k in 1..=SAMPLES {
        let x = lo + k as f64 * step;
        let v = f(x);
        if v < best {
            best = v;
            best_x = x;
        }
    }
    let mut a = (best_x - 2.0 * step).max(lo);
    let mut b = (best_x + 2.0 * step).min(hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    best.min(f(0.5 * (a + b)))
}

/// Parameters of the built-in coefficient family shared by both experiments:
/// c(s) = c_scale s(1-s), b = c^2 + epsilon, quartic double-well potential,
/// rational inverse relaxation time, and a tanh-of-cot bulk modulus.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientFamily {
    pub gamma: f64,
    pub epsilon: f64,
    pub d0: f64,
    pub c_scale: f64,
    pub f_scale: f64,
    pub f_root_low: f64,
    pub f_root_high: f64,
    pub kappa_scale: f64,
    pub a_scale: f64,
    pub a_slope: f64,
    pub phi_star: f64,
    pub clamp_delta: f64,
    pub f_bracket: (f64, f64),
}

/// Saturation bound for the tanh argument of the bulk-modulus presets.
const TANH_ARG_CAP: f64 = 40.0;

impl CoefficientFamily {
    /// Smooth-solution convergence setup: gamma = epsilon = 1e-3,
    /// c = (4/sqrt(10)) s(1-s), f = 16 (s-0.95)^2 (s-0.05)^2,
    /// kappa = 1e-2 / (10 s^2 + 1e-4),
    /// A = 5e-3 [1 + tanh(5 [cot(pi/2) - cot(pi s)])].
    pub fn experiment1() -> Self {
        CoefficientFamily {
            gamma: 1e-3,
            epsilon: 1e-3,
            d0: 1.0,
            c_scale: 4.0 / 10f64.sqrt(),
            f_scale: 16.0,
            f_root_low: 0.05,
            f_root_high: 0.95,
            kappa_scale: 1e-2,
            a_scale: 5e-3,
            a_slope: 5.0,
            phi_star: 0.5,
            clamp_delta: 1e-6,
            f_bracket: (-10.0, 11.0),
        }
    }

    /// Spinodal-decomposition setup: c = (1/sqrt(10)) s(1-s),
    /// f = (s-0.95)^2 (s-0.05)^2, kappa = 1e-3 / (10 s^2 + 1e-4),
    /// A = 0.5 [1 + tanh(10 [cot(pi phi*) - cot(pi s)])] with phi* the total
    /// mass of the initial state.
    pub fn experiment2(phi_star: f64) -> Self {
        CoefficientFamily {
            gamma: 1e-3,
            epsilon: 1e-3,
            d0: 1.0,
            c_scale: 1.0 / 10f64.sqrt(),
            f_scale: 1.0,
            f_root_low: 0.05,
            f_root_high: 0.95,
            kappa_scale: 1e-3,
            a_scale: 0.5,
            a_slope: 10.0,
            phi_star,
            clamp_delta: 1e-6,
            f_bracket: (-10.0, 11.0),
        }
    }

    pub fn build(&self) -> ModelCoefficients {
        let cs = self.c_scale;
        let eps = self.epsilon;
        let c = move |s: f64| cs * s * (1.0 - s);
        let c_d = move |s: f64| cs * (1.0 - 2.0 * s);
        let cross_mobility = ScalarFn1::new(c, c_d);
        let mobility = ScalarFn1::new(
            move |s| {
                let v = c(s);
                v * v + eps
            },
            move |s| 2.0 * c(s) * c_d(s),
        );

        let (fs, r0, r1) = (self.f_scale, self.f_root_low, self.f_root_high);
        let u = move |s: f64| (s - r0) * (s - r1);
        let u_d = move |s: f64| 2.0 * s - (r0 + r1);
        let potential = ScalarFn2::new(
            move |s| {
                let v = u(s);
                fs * v * v
            },
            move |s| 2.0 * fs * u(s) * u_d(s),
            move |s| {
                let d = u_d(s);
                2.0 * fs * (d * d + 2.0 * u(s))
            },
        );

        let ks = self.kappa_scale;
        let relaxation = ScalarFn1::new(
            move |s| ks / (10.0 * s * s + 1e-4),
            move |s| {
                let den = 10.0 * s * s + 1e-4;
                -20.0 * ks * s / (den * den)
            },
        );

        let (asc, slope, delta) = (self.a_scale, self.a_slope, self.clamp_delta);
        let cot = |x: f64| x.cos() / x.sin();
        let cot_star = cot(std::f64::consts::PI * self.phi_star);
        let a_val = move |s: f64| {
            let t = s.clamp(delta, 1.0 - delta);
            let arg = (slope * (cot_star - cot(std::f64::consts::PI * t)))
                .clamp(-TANH_ARG_CAP, TANH_ARG_CAP);
            asc * (1.0 + arg.tanh())
        };
        // Inside the clamp and below the saturation cap:
        //   A'(s)  = asc sech^2(arg) k(s),        k(s) = slope pi / sin^2(pi s)
        //   A''(s) = asc sech^2(arg) [k'(s) - 2 tanh(arg) k(s)^2].
        // Outside either region A is constant and both derivatives vanish.
        let a_d1 = move |s: f64| {
            if !(delta..=1.0 - delta).contains(&s) {
                return 0.0;
            }
            let arg = slope * (cot_star - cot(std::f64::consts::PI * s));
            if arg.abs() >= TANH_ARG_CAP {
                return 0.0;
            }
            let sin = (std::f64::consts::PI * s).sin();
            let k = slope * std::f64::consts::PI / (sin * sin);
            let sech = 1.0 / arg.cosh();
            asc * sech * sech * k
        };
        let a_d2 = move |s: f64| {
            if !(delta..=1.0 - delta).contains(&s) {
                return 0.0;
            }
            let arg = slope * (cot_star - cot(std::f64::consts::PI * s));
            if arg.abs() >= TANH_ARG_CAP {
                return 0.0;
            }
            let pi = std::f64::consts::PI;
            let sin = (pi * s).sin();
            let cos = (pi * s).cos();
            let k = slope * pi / (sin * sin);
            let k_d = -2.0 * slope * pi * pi * cos / (sin * sin * sin);
            let sech = 1.0 / arg.cosh();
            asc * sech * sech * (k_d - 2.0 * arg.tanh() * k * k)
        };
        let bulk_modulus = ScalarFn2::new(a_val, a_d1, a_d2);

        ModelCoefficients::from_parts(
            self.gamma,
            self.epsilon,
            self.d0,
            mobility,
            cross_mobility,
            bulk_modulus,
            relaxation,
            potential,
            self.clamp_delta,
            self.f_bracket,
        )
    }
}

/// Per-step structure diagnostics recorded along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    /// Integral of phi over the domain.
    pub mass: f64,
    /// Free energy of the nodal state.
    pub energy: f64,
    /// Dissipation of the slab ending at this step (absent at step 0).
    pub dissipation: Option<f64>,
    /// |E^n - E^{n-1} + tau D^n| for the slab ending here (absent at step 0).
    pub identity_residual: Option<f64>,
    pub newton_iterations: usize,
}

#[inline]
fn gather(space: &FESpace, fun: &FEFunction, el: usize) -> [f64; 6] {
    let dofs = &space.element_dofs[el];
    let mut out = [0.0f64; 6];
    for i in 0..6 {
        out[i] = fun.coefficients[dofs[i]];
    }
    out
}

#[inline]
fn value_grad(space: &FESpace, local: &[f64; 6], el: usize, q: usize) -> (f64, [f64; 2]) {
    let vals = space.shape_at(q);
    let grads = space.shape_grad_at(el, q);
    let mut v = 0.0;
    let mut g = [0.0f64; 2];
    for i in 0..6 {
        v += local[i] * vals[i];
        g[0] += local[i] * grads[i][0];
        g[1] += local[i] * grads[i][1];
    }
    (v, g)
}

/// Free energy E(phi, q) = integral of gamma/2 |grad phi|^2 + f(phi) + q^2/2.
pub fn energy(
    space: &FESpace,
    phi: &FEFunction,
    q_fun: &FEFunction,
    coeffs: &ModelCoefficients,
) -> f64 {
    let nq = space.quad_point_count();
    let mut acc = 0.0f64;
    for el in 0..space.element_count() {
        let area = space.element_area(el);
        let phi_l = gather(space, phi, el);
        let q_l = gather(space, q_fun, el);
        for q in 0..nq {
            let w = space.quad.weights[q] * area;
            let (pv, pg) = value_grad(space, &phi_l, el, q);
            let (qv, _) = value_grad(space, &q_l, el, q);
            acc += w
                * (0.5 * coeffs.gamma * (pg[0] * pg[0] + pg[1] * pg[1])
                    + coeffs.f(pv)
                    + 0.5 * qv * qv);
        }
    }
    acc
}

/// Dissipation functional
/// `D_phi(mu, q) = integral of (1/d0)|c grad(mu) - d0 grad(A q)|^2
/// + (b - c^2/d0)|grad(mu)|^2 + epsilon |grad(q)|^2 + kappa q^2`,
/// with grad(A(phi) q) expanded pointwise as A'(phi) grad(phi) q + A(phi) grad(q).
pub fn dissipation(
    space: &FESpace,
    phi_bar: &FEFunction,
    mu_bar: &FEFunction,
    q_bar: &FEFunction,
    coeffs: &ModelCoefficients,
) -> f64 {
    let nq = space.quad_point_count();
    let mut acc = 0.0f64;
    for el in 0..space.element_count() {
        let area = space.element_area(el);
        let phi_l = gather(space, phi_bar, el);
        let mu_l = gather(space, mu_bar, el);
        let q_l = gather(space, q_bar, el);
        for q in 0..nq {
            let w = space.quad.weights[q] * area;
            let (pv, pg) = value_grad(space, &phi_l, el, q);
            let (_, mg) = value_grad(space, &mu_l, el, q);
            let (qv, qg) = value_grad(space, &q_l, el, q);

            let a_p = coeffs.a_prime(pv);
            let a_v = coeffs.a(pv);
            let wx = a_p * pg[0] * qv + a_v * qg[0];
            let wy = a_p * pg[1] * qv + a_v * qg[1];

            let cv = coeffs.c(pv);
            let fx = cv * mg[0] - coeffs.d0 * wx;
            let fy = cv * mg[1] - coeffs.d0 * wy;

            acc += w
                * ((fx * fx + fy * fy) / coeffs.d0
                    + (coeffs.b(pv) - cv * cv / coeffs.d0) * (mg[0] * mg[0] + mg[1] * mg[1])
                    + coeffs.epsilon * (qg[0] * qg[0] + qg[1] * qg[1])
                    + coeffs.kappa(pv) * qv * qv);
        }
    }
    acc
}

/// Relative energy
/// `E_alpha(phi, q | phi_hat, q_hat) = gamma/2 ||grad(phi - phi_hat)||^2
///   + <f(phi) - f(phi_hat) - f'(phi_hat)(phi - phi_hat), 1>
///   + alpha/2 ||phi - phi_hat||^2 + 1/2 ||q - q_hat||^2`.
pub fn relative_energy(
    space: &FESpace,
    phi: &FEFunction,
    q_fun: &FEFunction,
    phi_hat: &FEFunction,
    q_hat: &FEFunction,
    coeffs: &ModelCoefficients,
) -> f64 {
    let nq = space.quad_point_count();
    let mut acc = 0.0f64;
    for el in 0..space.element_count() {
        let area = space.element_area(el);
        let phi_l = gather(space, phi, el);
        let phih_l = gather(space, phi_hat, el);
        let q_l = gather(space, q_fun, el);
        let qh_l = gather(space, q_hat, el);
        for q in 0..nq {
            let w = space.quad.weights[q] * area;
            let (pv, pg) = value_grad(space, &phi_l, el, q);
            let (phv, phg) = value_grad(space, &phih_l, el, q);
            let (qv, _) = value_grad(space, &q_l, el, q);
            let (qhv, _) = value_grad(space, &qh_l, el, q);

            let dgx = pg[0] - phg[0];
            let dgy = pg[1] - phg[1];
            let dphi = pv - phv;
            let dq = qv - qhv;
            acc += w
                * (0.5 * coeffs.gamma * (dgx * dgx + dgy * dgy)
                    + (coeffs.f(pv) - coeffs.f(phv) - coeffs.f_prime(phv) * dphi)
                    + 0.5 * coeffs.alpha * dphi * dphi
                    + 0.5 * dq * dq);
        }
    }
    acc
}

/// One inequality of the coefficient assumptions together with its worst
/// sampled margin (negative = violated).
#[derive(Clone, Debug)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub margin: f64,
    pub pass: bool,
}

/// Outcome of sampling the assumption inequalities over a phi interval.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                f,
                "{:<width$}  margin {:>13.6e}  {}",
                c.name,
                c.margin,
                if c.pass { "ok" } else { "VIOLATED" },
            )?;
        }
        Ok(())
    }
}

/// Samples the assumption inequalities on `samples` evenly spaced points of
/// `phi_range`. A check fails when its worst margin drops below -1e-12.
pub fn validate_assumptions(
    coeffs: &ModelCoefficients,
    phi_range: (f64, f64),
    samples: usize,
) -> ValidationReport {
    assert!(samples >= 100, "need at least 100 sample points");
    let (lo, hi) = phi_range;
    let step = (hi - lo) / (samples - 1) as f64;

    let min_over = |f: &dyn Fn(f64) -> f64| -> f64 {
        let mut m = f64::INFINITY;
        for k in 0..samples {
            m = m.min(f(lo + k as f64 * step));
        }
        m
    };

    const TOL: f64 = 1e-12;
    let mut checks = Vec::new();
    let mut push = |name: &'static str, margin: f64| {
        checks.push(AssumptionCheck {
            name,
            margin,
            pass: margin >= -TOL,
        });
    };

    push("gamma > 0", coeffs.gamma);
    push("epsilon > 0", coeffs.epsilon);
    push("d0 > 0", coeffs.d0);
    push("b >= b1 > 0", min_over(&|s| coeffs.b(s)));
    push(
        "b >= c^2/d0 + epsilon",
        min_over(&|s| coeffs.b(s) - coeffs.c(s) * coeffs.c(s) / coeffs.d0 - coeffs.epsilon),
    );
    push("c >= 0", min_over(&|s| coeffs.c(s)));
    push("kappa >= kappa1 > 0", min_over(&|s| coeffs.kappa(s)));
    push("A >= 0", min_over(&|s| coeffs.a(s)));
    push("f >= -f1", min_over(&|s| coeffs.f(s) + coeffs.f_one));
    push(
        "f'' >= -f1",
        min_over(&|s| coeffs.f_second(s) + coeffs.f_one),
    );

    ValidationReport { checks }
}

/// Worst relative mismatch between each supplied derivative and a central
/// finite difference, sampled on `samples` points of `range`. Mismatch is
/// measured as |analytic - fd| / (1 + |analytic|).
pub fn derivative_consistency(
    coeffs: &ModelCoefficients,
    range: (f64, f64),
    samples: usize,
) -> f64 {
    let (lo, hi) = range;
    let step = (hi - lo) / (samples - 1) as f64;
    let h = 1e-6;
    let fd = |f: &dyn Fn(f64) -> f64, s: f64| (f(s + h) - f(s - h)) / (2.0 * h);

    let pairs: [(&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64); 7] = [
        (&|s| coeffs.b(s), &|s| coeffs.b_prime(s)),
        (&|s| coeffs.c(s), &|s| coeffs.c_prime(s)),
        (&|s| coeffs.a(s), &|s| coeffs.a_prime(s)),
        (&|s| coeffs.a_prime(s), &|s| coeffs.a_second(s)),
        (&|s| coeffs.kappa(s), &|s| coeffs.kappa_prime(s)),
        (&|s| coeffs.f(s), &|s| coeffs.f_prime(s)),
        (&|s| coeffs.f_prime(s), &|s| coeffs.f_second(s)),
    ];
    let mut worst = 0.0f64;
    for (f, df) in pairs {
        for k in 0..samples {
            let s = lo + k as f64 * step;
            let analytic = df(s);
            let approx = fd(f, s);
            worst = worst.max((analytic - approx).abs() / (1.0 + analytic.abs()));
        }
    }
    worst
}
