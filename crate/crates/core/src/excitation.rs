//! Excitation commands and the synthetic twin that stands in for the real motor.
//!
//! Desired velocities are a sum of randomly drawn sine modes, clipped to the
//! motor's velocity limit and integrated (trapezoidal rule) into desired angles.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{plant_config_hash, DatasetMetadata, TrajectoryDataset};
use crate::dynamics::{Action, JointState, MotorParams, PlantConfig};
use crate::error::{Error, Result};
use crate::integrators::{step_checked, IntegratorKind};

/// The twin integrates with RK4 at `delta / TWIN_SUBSTEPS`.
pub const TWIN_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    /// Inclusive range of the number of modes.
    pub num_modes: (usize, usize),
    /// Mode amplitude range (rad/s).
    pub amplitude_range: (f64, f64),
    /// Mode frequency range (Hz).
    pub frequency_range: (f64, f64),
    /// Mode phase range (rad).
    pub phase_range: (f64, f64),
    /// Velocity clipping limit (rad/s).
    pub v_max: f64,
    /// Signal duration (s).
    pub duration: f64,
    pub seed: u64,
}

impl Default for FourierSpec {
    fn default() -> Self {
        Self {
            num_modes: (3, 8),
            amplitude_range: (0.2, 2.0),
            frequency_range: (0.1, 3.0),
            phase_range: (0.0, TAU),
            v_max: 4.0,
            duration: 60.0,
            seed: 0,
        }
    }
}

impl FourierSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if self.num_modes.0 < 1 || self.num_modes.0 > self.num_modes.1 {
            return Err(Error::InvalidConfig(format!(
                "num_modes range {:?} must satisfy 1 <= min <= max",
                self.num_modes
            )));
        }
        if !ordered(self.amplitude_range)
            || !ordered(self.frequency_range)
            || !ordered(self.phase_range)
        {
            return Err(Error::InvalidConfig("excitation ranges must satisfy min <= max".into()));
        }
        if !(self.v_max > 0.0) || !(self.duration > 0.0) {
            return Err(Error::InvalidConfig("v_max and duration must be > 0".into()));
        }
        Ok(())
    }

    /// Draws the mode set deterministically from `seed`.
    pub fn sample(&self) -> Result<FourierSignal> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let count = rng.random_range(self.num_modes.0..=self.num_modes.1);
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        let modes = (0..count)
            .map(|_| FourierMode {
                amplitude: draw(&mut rng, self.amplitude_range),
                frequency: draw(&mut rng, self.frequency_range),
                phase: draw(&mut rng, self.phase_range),
            })
            .collect();
        Ok(FourierSignal {
            modes,
            offset: 0.0,
            v_max: self.v_max,
            duration: self.duration,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// A concrete clipped multi-sine velocity profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSignal {
    pub modes: Vec<FourierMode>,
    /// Constant velocity added to the modes (rad/s).
    pub offset: f64,
    pub v_max: f64,
    pub duration: f64,
}

impl FourierSignal {
    pub fn velocity(&self, t: f64) -> f64 {
        let v: f64 = self.offset
            + self
                .modes
                .iter()
                .map(|m| m.amplitude * (TAU * m.frequency * t + m.phase).sin())
                .sum::<f64>();
        v.clamp(-self.v_max, self.v_max)
    }

    /// Trapezoidal integral of the clipped velocity on the `dt` grid, starting at `q0`.
    pub fn angles(&self, q0: f64, dt: f64) -> Result<Vec<Action<f64>>> {
        if !(dt > 0.0) || dt > self.duration {
            return Err(Error::InvalidConfig(format!(
                "angle grid step {dt} must lie in (0, duration]"
            )));
        }
        let samples = grid_len(self.duration, dt);
        let mut out = Vec::with_capacity(samples);
        let mut q = q0;
        let mut v_prev = self.velocity(0.0);
        out.push(Action::new(q));
        for i in 1..samples {
            let v = self.velocity(i as f64 * dt);
            q += 0.5 * dt * (v_prev + v);
            v_prev = v;
            out.push(Action::new(q));
        }
        Ok(out)
    }
}

/// `floor(duration / dt) + 1`, tolerant to rounding in the quotient.
pub fn grid_len(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize + 1
}

pub fn generate_desired_velocity(spec: &FourierSpec, t: f64) -> Result<f64> {
    Ok(spec.sample()?.velocity(t))
}

pub fn integrate_to_angles(spec: &FourierSpec, q0: f64, dt: f64) -> Result<Vec<Action<f64>>> {
    spec.sample()?.angles(q0, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTwinSpec {
    /// Ground truth hidden from the fitter.
    pub true_params: MotorParams<f64>,
    /// Angle noise standard deviation (rad).
    pub noise_std_q: f64,
    /// Velocity noise standard deviation (rad/s).
    pub noise_std_v: f64,
    pub noise_seed: u64,
}

impl Default for SyntheticTwinSpec {
    fn default() -> Self {
        Self {
            true_params: MotorParams::new(0.01, 0.1, 0.05),
            noise_std_q: 1e-4,
            noise_std_v: 1e-3,
            noise_seed: 1,
        }
    }
}

impl SyntheticTwinSpec {
    pub fn noiseless(true_params: MotorParams<f64>) -> Self {
        Self {
            true_params,
            noise_std_q: 0.0,
            noise_std_v: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.true_params.validate()?;
        let ok = |s: f64| s >= 0.0 && s.is_finite();
        if !ok(self.noise_std_q) || !ok(self.noise_std_v) {
            return Err(Error::InvalidConfig("noise standard deviations must be >= 0".into()));
        }
        Ok(())
    }
}

/// How a dataset was produced. Stored in the dataset header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub excitation: Option<FourierSpec>,
    pub initial_state: JointState<f64>,
    pub twin_integrator: IntegratorKind,
    pub twin_substeps: usize,
    pub noise_std_q: f64,
    pub noise_std_v: f64,
    pub noise_seed: u64,
}

/// Rolls the hidden-parameter model under `actions` (one per `cfg.delta` tick)
/// and records noisy states.
pub fn simulate_twin(
    actions: &[Action<f64>],
    s0: JointState<f64>,
    twin: &SyntheticTwinSpec,
    cfg: &PlantConfig<f64>,
) -> Result<TrajectoryDataset> {
    twin.validate()?;
    cfg.validate()?;
    if actions.is_empty() {
        return Err(Error::InvalidConfig("twin needs at least one action".into()));
    }
    let params = &twin.true_params;
    let h = cfg.delta / TWIN_SUBSTEPS as f64;

    let mut clean = Vec::with_capacity(actions.len());
    let mut s = s0;
    for (i, &a) in actions.iter().enumerate() {
        clean.push(s);
        if i + 1 == actions.len() {
            break;
        }
        for _ in 0..TWIN_SUBSTEPS {
            s = step_checked(s, a, params, cfg, IntegratorKind::Rk4, h, i)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(twin.noise_seed);
    let noise_q = Normal::new(0.0, twin.noise_std_q).expect("validated std");
    let noise_v = Normal::new(0.0, twin.noise_std_v).expect("validated std");
    let states = clean
        .into_iter()
        .map(|s| {
            let dq = noise_q.sample(&mut rng);
            let dv = noise_v.sample(&mut rng);
            JointState::new(s.q + dq, s.v + dv)
        })
        .collect();

    let timestamps = (0..actions.len()).map(|i| i as f64 * cfg.delta).collect();
    let metadata = DatasetMetadata {
        delta: Some(cfg.delta),
        plant_config_hash: Some(plant_config_hash(cfg)),
        generator: Some(GeneratorMetadata {
            excitation: None,
            initial_state: s0,
            twin_integrator: IntegratorKind::Rk4,
            twin_substeps: TWIN_SUBSTEPS,
            noise_std_q: twin.noise_std_q,
            noise_std_v: twin.noise_std_v,
            noise_seed: twin.noise_seed,
        }),
        hidden_ground_truth: Some(twin.true_params.clone()),
        ..Default::default()
    };
    TrajectoryDataset::new(timestamps, states, actions.to_vec(), metadata)
}

/// Excitation plus twin: the full synthetic data pipeline.
pub fn generate_dataset(
    spec: &FourierSpec,
    s0: JointState<f64>,
    twin: &SyntheticTwinSpec,
    cfg: &PlantConfig<f64>,
) -> Result<TrajectoryDataset> {
    let actions = integrate_to_angles(spec, s0.q, cfg.delta)?;
    let mut data = simulate_twin(&actions, s0, twin, cfg)?;
    if let Some(generator) = data.metadata.generator.as_mut() {
        generator.excitation = Some(spec.clone());
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::step;

    fn single_mode(amplitude: f64, v_max: f64) -> FourierSignal {
        FourierSignal {
            modes: vec![FourierMode {
                amplitude,
                frequency: 1.0,
                phase: 0.0,
            }],
            offset: 0.0,
            v_max,
            duration: 1.0,
        }
    }

    #[test]
    fn zero_amplitude_is_silent() {
        let spec = FourierSpec {
            amplitude_range: (0.0, 0.0),
            ..Default::default()
        };
        let signal = spec.sample().unwrap();
        for i in 0..100 {
            assert_eq!(signal.velocity(i as f64 * 0.37), 0.0);
        }
        let angles = integrate_to_angles(&spec, 0.3, 1e-3).unwrap();
        assert!(angles.iter().all(|a| a.q_des == 0.3));
    }

    #[test]
    fn single_mode_value() {
        assert!((single_mode(1.0, 10.0).velocity(0.25) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_and_saturates() {
        let signal = single_mode(100.0, 2.0);
        let values: Vec<f64> = (0..1000).map(|i| signal.velocity(i as f64 * 1e-3)).collect();
        assert!(values.iter().all(|v| v.abs() <= 2.0));
        let saturated = values.iter().filter(|v| v.abs() == 2.0).count();
        assert!(saturated > 100);
    }

    #[test]
    fn constant_velocity_integrates_exactly() {
        let signal = FourierSignal {
            modes: vec![],
            offset: 1.0,
            v_max: 10.0,
            duration: 1.0,
        };
        let angles = signal.angles(0.5, 1e-3).unwrap();
        assert_eq!(angles.len(), 1001);
        let rise = angles.last().unwrap().q_des - angles[0].q_des;
        assert!((rise - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sine_integrates_to_closed_form() {
        let signal = single_mode(1.0, 10.0);
        let angles = signal.angles(0.0, 1e-3).unwrap();
        let max_err = angles
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let t = i as f64 * 1e-3;
                (a.q_des - (1.0 - (TAU * t).cos()) / TAU).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_err < 1e-5, "trapezoid error {max_err}");
    }

    #[test]
    fn sampling_is_seeded() {
        let spec = FourierSpec::default();
        assert_eq!(spec.sample().unwrap(), spec.sample().unwrap());
        let other = FourierSpec { seed: 7, ..spec.clone() };
        assert_ne!(spec.sample().unwrap(), other.sample().unwrap());
        let signal = spec.sample().unwrap();
        assert!((3..=8).contains(&signal.modes.len()));
        for m in &signal.modes {
            assert!((0.2..2.0).contains(&m.amplitude));
            assert!((0.1..3.0).contains(&m.frequency));
            assert!((0.0..TAU).contains(&m.phase));
        }
    }

    #[test]
    fn spec_validation() {
        let bad = FourierSpec {
            num_modes: (0, 3),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FourierSpec {
            frequency_range: (3.0, 1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(integrate_to_angles(&FourierSpec::default(), 0.0, 100.0).is_err());
    }

    #[test]
    fn grid_length() {
        assert_eq!(grid_len(60.0, 1e-3), 60_001);
        assert_eq!(grid_len(1.0, 0.3), 4);
    }

    #[test]
    fn twin_at_rest() {
        let cfg = PlantConfig::default();
        let twin = SyntheticTwinSpec::noiseless(MotorParams::new(0.01, 0.1, 0.05));
        let actions = vec![Action::new(0.0); 50];
        let data = simulate_twin(&actions, JointState::new(0.0, 0.0), &twin, &cfg).unwrap();
        assert!(data.states.iter().all(|s| *s == JointState::new(0.0, 0.0)));
        assert_eq!(data.metadata.hidden_ground_truth, Some(twin.true_params));
    }

    #[test]
    fn noiseless_twin_matches_fine_rk4() {
        let cfg = PlantConfig::default();
        let fine = PlantConfig {
            delta: cfg.delta / TWIN_SUBSTEPS as f64,
            ..cfg.clone()
        };
        let twin = SyntheticTwinSpec::noiseless(MotorParams::new(0.01, 0.1, 0.05));
        let spec = FourierSpec {
            duration: 0.5,
            ..Default::default()
        };
        let actions = integrate_to_angles(&spec, 0.0, cfg.delta).unwrap();
        let data = simulate_twin(&actions, JointState::new(0.0, 0.0), &twin, &cfg).unwrap();
        let mut s = JointState::new(0.0, 0.0);
        for (i, &a) in actions.iter().enumerate() {
            assert_eq!(data.states[i], s);
            assert_eq!(data.actions[i], a);
            for _ in 0..TWIN_SUBSTEPS {
                s = step(s, a, &twin.true_params, &fine, IntegratorKind::Rk4).unwrap();
            }
        }
    }

    #[test]
    fn twin_is_deterministic() {
        let cfg = PlantConfig::default();
        let spec = FourierSpec {
            duration: 1.0,
            ..Default::default()
        };
        let twin = SyntheticTwinSpec::default();
        let a = generate_dataset(&spec, JointState::default(), &twin, &cfg).unwrap();
        let b = generate_dataset(&spec, JointState::default(), &twin, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1001);
    }

    #[test]
    fn default_excitation_is_persistent() {
        let cfg = PlantConfig::default();
        let spec = FourierSpec::default();
        let twin = SyntheticTwinSpec::noiseless(MotorParams::new(0.01, 0.1, 0.05));
        let data = generate_dataset(&spec, JointState::default(), &twin, &cfg).unwrap();
        let (lo, hi) = data
            .states
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), s| (lo.min(s.v), hi.max(s.v)));
        assert!(lo <= -0.5 * spec.v_max && hi >= 0.5 * spec.v_max, "velocity span [{lo}, {hi}]");
    }
}
