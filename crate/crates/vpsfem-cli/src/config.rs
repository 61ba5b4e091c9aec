//! JSON run configuration. Unknown keys are rejected so typos surface
//! immediately; the parse error names the offending key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vpsfem::stepper::NewtonConfig;

use crate::CliError;

/// Parameter family selection: a built-in experiment or a custom coefficient
/// table over the same functional family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetChoice {
    Experiment1,
    Experiment2,
    Custom(CustomCoefficients),
}

/// Custom instance of the built-in coefficient family:
/// c(s) = c_scale s(1-s), b = c^2 + epsilon,
/// f = f_scale (s - f_root_low)^2 (s - f_root_high)^2,
/// kappa = kappa_scale / (10 s^2 + 1e-4),
/// A = a_scale [1 + tanh(a_slope [cot(pi phi_star) - cot(pi s)])].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCoefficients {
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
    #[serde(default = "default_clamp_delta")]
    pub clamp_delta: f64,
    /// Amplitude of the seeded uniform nodal perturbation around `phi_star`
    /// (only used when a seed is given; 0 gives the constant state).
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn default_clamp_delta() -> f64 {
    1e-6
}

fn default_perturbation() -> f64 {
    0.0025
}

/// Newton solver settings (all optional in the file).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSettings {
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub damping: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        let d = NewtonConfig::default();
        NewtonSettings {
            residual_tol: d.residual_tol,
            max_iterations: d.max_iterations,
            damping: d.damping,
        }
    }
}

impl From<NewtonSettings> for NewtonConfig {
    fn from(s: NewtonSettings) -> Self {
        NewtonConfig {
            residual_tol: s.residual_tol,
            max_iterations: s.max_iterations,
            damping: s.damping,
        }
    }
}

/// One simulation setup: preset, mesh resolution, time grid, solver settings,
/// seed (experiment2 only), output directory, and snapshot stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: PresetChoice,
    pub n: usize,
    pub final_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub newton: NewtonSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Snapshot every this many steps (0 disables periodic snapshots; the
    /// initial and final states are always written by `simulate`).
    #[serde(default)]
    pub snapshot_stride: usize,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n < 3 {
            return Err(CliError::Config(format!(
                "key 'n': mesh resolution must be at least 3, got {}",
                self.n
            )));
        }
        if !(self.final_time > 0.0) {
            return Err(CliError::Config(format!(
                "key 'final_time': must be positive, got {}",
                self.final_time
            )));
        }
        match (self.steps, self.tau) {
            (Some(steps), None) => {
                if steps == 0 {
                    return Err(CliError::Config(
                        "key 'steps': must be at least 1".to_string(),
                    ));
                }
            }
            (None, Some(tau)) => {
                if !(tau > 0.0) {
                    return Err(CliError::Config(format!(
                        "key 'tau': must be positive, got {tau}"
                    )));
                }
                let steps = self.final_time / tau;
                if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                    return Err(CliError::Config(format!(
                        "key 'tau': final_time = {} is not an integer multiple of tau = {tau}",
                        self.final_time
                    )));
                }
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "keys 'steps' and 'tau': give exactly one of them".to_string(),
                ));
            }
            (None, None) => {
                return Err(CliError::Config(
                    "keys 'steps'/'tau': one of them is required".to_string(),
                ));
            }
        }
        if matches!(self.preset, PresetChoice::Experiment2) && self.seed.is_none() {
            return Err(CliError::Config(
                "key 'seed': required for the experiment2 preset".to_string(),
            ));
        }
        Ok(())
    }

    /// Number of time steps implied by `steps` or `tau`.
    pub fn step_count(&self) -> usize {
        match (self.steps, self.tau) {
            (Some(steps), _) => steps,
            (None, Some(tau)) => (self.final_time / tau).round() as usize,
            _ => unreachable!("validated"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{"preset": "experiment1", "n": 8, "final_time": 1.0, "steps": 16{extra}}}"#
        )
    }

    #[test]
    fn parses_minimal_experiment1() {
        let c = RunConfig::parse(&minimal("")).unwrap();
        assert_eq!(c.preset, PresetChoice::Experiment1);
        assert_eq!(c.step_count(), 16);
        assert_eq!(c.newton.max_iterations, 25);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse(&minimal(r#", "snapshotStride": 2"#)).unwrap_err();
        assert!(err.to_string().contains("snapshotStride"), "{err}");
    }

    #[test]
    fn tau_must_divide_final_time() {
        let text = r#"{"preset": "experiment1", "n": 8, "final_time": 1.0, "tau": 0.3}"#;
        let err = RunConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");

        let text = r#"{"preset": "experiment1", "n": 8, "final_time": 1.0, "tau": 0.0625}"#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.step_count(), 16);
    }

    #[test]
    fn experiment2_needs_seed() {
        let text = r#"{"preset": "experiment2", "n": 8, "final_time": 1.0, "steps": 4}"#;
        let err = RunConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn custom_preset_round_trips() {
        let text = r#"{
            "preset": {"custom": {
                "gamma": 1e-3, "epsilon": 1e-3, "d0": 1.0,
                "c_scale": 0.31622776601683794,
                "f_scale": 1.0, "f_root_low": 0.05, "f_root_high": 0.95,
                "kappa_scale": 1e-3, "a_scale": 0.5, "a_slope": 10.0,
                "phi_star": 0.4, "perturbation": 0.001
            }},
            "n": 16, "final_time": 2.0, "tau": 0.01, "seed": 7,
            "newton": {"residual_tol": 1e-10, "max_iterations": 30, "damping": true},
            "snapshot_stride": 10
        }"#;
        let c = RunConfig::parse(text).unwrap();
        let json = c.to_json();
        let c2 = RunConfig::parse(&json).unwrap();
        assert_eq!(c, c2);
    }
}
