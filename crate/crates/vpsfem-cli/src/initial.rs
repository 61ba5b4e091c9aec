//! Initial-data generation and problem setup for the presets.
//!
//! Experiment 1 projects the smooth fields
//! phi0 = 0.25 cos(2 pi x) cos(2 pi y) + 0.5 (H1 projection) and
//! q0 = 0.01 sin(2 pi x) sin(2 pi y) (L2 projection). Experiment 2 assigns
//! phi0 = 0.4 + xi per P2 degree of freedom with xi drawn i.i.d. uniform on
//! [-0.0025, 0.0025] in ascending DOF order from a seeded SplitMix64, and
//! q0 = 0.

use std::f64::consts::PI;
use std::sync::Arc;

use vpsfem::fem::{project, FEFunction, FESpace, FnField, FunctionalKind, ProjectionKind};
use vpsfem::model::{CoefficientFamily, ModelCoefficients};

use crate::config::{PresetChoice, RunConfig};
use crate::CliError;

/// SplitMix64: the 64-bit generator of Steele, Lea, and Flood. One additive
/// Weyl step followed by two xor-multiply mixes; fully specified here so
/// perturbations reproduce across implementations.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn smooth_phi_field() -> impl vpsfem::fem::Field {
    FnField {
        value: |x: f64, y: f64| 0.25 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos() + 0.5,
        gradient: |x: f64, y: f64| {
            let k = 2.0 * PI;
            [
                -0.25 * k * (k * x).sin() * (k * y).cos(),
                -0.25 * k * (k * x).cos() * (k * y).sin(),
            ]
        },
    }
}

fn smooth_q_field() -> impl vpsfem::fem::Field {
    FnField {
        value: |x: f64, y: f64| 0.01 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
        gradient: |x: f64, y: f64| {
            let k = 2.0 * PI;
            [
                0.01 * k * (k * x).cos() * (k * y).sin(),
                0.01 * k * (k * x).sin() * (k * y).cos(),
            ]
        },
    }
}

/// Amplitude of the experiment-2 uniform perturbation.
const PERTURBATION: f64 = 0.0025;

fn perturbed_phi(space: &Arc<FESpace>, mean: f64, amplitude: f64, seed: u64) -> FEFunction {
    let mut rng = SplitMix64::new(seed);
    let coefficients = (0..space.dof_count)
        .map(|_| mean + amplitude * (2.0 * rng.next_f64() - 1.0))
        .collect();
    FEFunction::from_coefficients(Arc::clone(space), coefficients)
}

/// Initial fields for a preset on the given space.
pub fn make_initial_data(
    space: &Arc<FESpace>,
    preset: &PresetChoice,
    seed: Option<u64>,
) -> Result<(FEFunction, FEFunction), CliError> {
    match preset {
        PresetChoice::Experiment1 => {
            let phi0 = project(space, ProjectionKind::H1, &smooth_phi_field())?;
            let q0 = project(space, ProjectionKind::L2, &smooth_q_field())?;
            Ok((phi0, q0))
        }
        PresetChoice::Experiment2 => {
            let seed = seed.ok_or_else(|| {
                CliError::Config("key 'seed': required for the experiment2 preset".to_string())
            })?;
            let phi0 = perturbed_phi(space, 0.4, PERTURBATION, seed);
            let q0 = FEFunction::zeros(Arc::clone(space));
            Ok((phi0, q0))
        }
        PresetChoice::Custom(custom) => {
            // Smooth experiment-1-style data without a seed; the seeded
            // uniform perturbation around phi_star with it.
            match seed {
                None => {
                    let phi0 = project(space, ProjectionKind::H1, &smooth_phi_field())?;
                    let q0 = project(space, ProjectionKind::L2, &smooth_q_field())?;
                    Ok((phi0, q0))
                }
                Some(seed) => {
                    let phi0 = perturbed_phi(space, custom.phi_star, custom.perturbation, seed);
                    let q0 = FEFunction::zeros(Arc::clone(space));
                    Ok((phi0, q0))
                }
            }
        }
    }
}

fn family_for(preset: &PresetChoice, phi_star: f64) -> CoefficientFamily {
    match preset {
        PresetChoice::Experiment1 => CoefficientFamily::experiment1(),
        PresetChoice::Experiment2 => CoefficientFamily::experiment2(phi_star),
        PresetChoice::Custom(c) => CoefficientFamily {
            gamma: c.gamma,
            epsilon: c.epsilon,
            d0: c.d0,
            c_scale: c.c_scale,
            f_scale: c.f_scale,
            f_root_low: c.f_root_low,
            f_root_high: c.f_root_high,
            kappa_scale: c.kappa_scale,
            a_scale: c.a_scale,
            a_slope: c.a_slope,
            phi_star: c.phi_star,
            clamp_delta: c.clamp_delta,
            f_bracket: (-10.0, 11.0),
        },
    }
}

/// Builds the coefficient bundle and initial fields for a configuration.
/// For experiment 2 the bulk-modulus reference phi_star is the total mass of
/// the generated initial state.
pub fn build_problem(
    config: &RunConfig,
    space: &Arc<FESpace>,
) -> Result<(ModelCoefficients, FEFunction, FEFunction), CliError> {
    let (phi0, q0) = make_initial_data(space, &config.preset, config.seed)?;
    let phi_star = match &config.preset {
        PresetChoice::Experiment2 => {
            vpsfem::fem::functional(space, FunctionalKind::Integral, &phi0)
        }
        PresetChoice::Experiment1 => 0.5,
        PresetChoice::Custom(c) => c.phi_star,
    };
    let coeffs = family_for(&config.preset, phi_star).build();
    Ok((coeffs, phi0, q0))
}

/// Coefficients for a preset independent of a mesh (used by `validate`);
/// experiment 2 uses the nominal mean 0.4 for phi_star here, which the
/// perturbation only shifts by O(1e-3) in any case.
pub fn coefficients_for(preset: &PresetChoice) -> ModelCoefficients {
    family_for(preset, 0.4).build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use vpsfem::mesh::build_periodic_unit_square_mesh;

    #[test]
    fn splitmix_reference_values() {
        // First outputs for seed 1234567, cross-checked against the published
        // reference implementation.
        let mut rng = SplitMix64::new(1234567);
        let a = rng.next_u64();
        let b = rng.next_u64();
        assert_eq!(a, 6457827717110365317);
        assert_eq!(b, 3203168211198807973);
    }

    #[test]
    fn experiment1_fields_before_projection() {
        // phi at the origin is 0.25 + 0.5; q at (1/4, 1/4) is 0.01.
        let phi = smooth_phi_field();
        let q = smooth_q_field();
        assert!((vpsfem::fem::Field::value(&phi, 0.0, 0.0) - 0.75).abs() < 1e-15);
        assert!((vpsfem::fem::Field::value(&q, 0.25, 0.25) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn experiment2_nodal_range_and_determinism() {
        let space = FESpace::new(Arc::new(build_periodic_unit_square_mesh(6).unwrap()));
        let (phi, q) =
            make_initial_data(&space, &PresetChoice::Experiment2, Some(42)).unwrap();
        assert!(phi
            .coefficients
            .iter()
            .all(|v| (0.3975..=0.4025).contains(v)));
        assert!(q.coefficients.iter().all(|v| *v == 0.0));

        let (phi2, _) =
            make_initial_data(&space, &PresetChoice::Experiment2, Some(42)).unwrap();
        assert_eq!(phi.coefficients, phi2.coefficients);

        let (phi3, _) =
            make_initial_data(&space, &PresetChoice::Experiment2, Some(43)).unwrap();
        assert_ne!(phi.coefficients, phi3.coefficients);
    }
}
