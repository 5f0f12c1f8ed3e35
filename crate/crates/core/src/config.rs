//! Run configuration: a single JSON document with a schema version, plus
//! `path.to.leaf=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{JointState, MotorParams, PlantConfig};
use crate::error::{Error, Result};
use crate::excitation::{FourierSpec, SyntheticTwinSpec};
use crate::gradients::GradientTolerance;
use crate::neural_friction::{DEFAULT_HIDDEN, DEFAULT_INPUT_SCALE};
use crate::sysid::FitConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Architecture and seed of the neural friction head, used when the head is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub hidden: usize,
    /// Velocity normalisation (rad/s).
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            input_scale: DEFAULT_INPUT_SCALE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Number of random (params, segment) cases.
    pub cases: usize,
    pub seed: u64,
    /// Relative finite-difference step.
    pub h_scale: f64,
    pub tolerance: GradientTolerance,
    /// Targets are produced by the case parameters themselves, so every gradient is zero.
    pub zero_residual: bool,
    /// Include a neural friction head in every case.
    pub neural: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            cases: 20,
            seed: 0,
            h_scale: 1e-6,
            tolerance: GradientTolerance::default(),
            zero_residual: false,
            neural: false,
        }
    }
}

/// Artifact locations, relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub dataset: PathBuf,
    pub fit_report: PathBuf,
    pub fit_curve: PathBuf,
    pub eval_report: PathBuf,
    pub eval_errors: PathBuf,
    pub gradcheck_report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "out/trajectory.csv".into(),
            fit_report: "out/fit_report.json".into(),
            fit_curve: "out/fit_curve.csv".into(),
            eval_report: "out/eval_report.json".into(),
            eval_errors: "out/eval_errors.csv".into(),
            gradcheck_report: "out/gradcheck.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub plant: PlantConfig<f64>,
    pub excitation: FourierSpec,
    pub twin: SyntheticTwinSpec,
    pub initial_state: JointState<f64>,
    /// Steps per segment.
    pub segment_length: usize,
    pub train_fraction: f64,
    pub fit: FitConfig,
    pub neural: NeuralConfig,
    /// Comparison model for evaluation.
    pub baseline: MotorParams<f64>,
    pub gradcheck: GradcheckConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            plant: PlantConfig::default(),
            excitation: FourierSpec::default(),
            twin: SyntheticTwinSpec::default(),
            initial_state: JointState::default(),
            segment_length: 4,
            train_fraction: 0.8,
            fit: FitConfig::default(),
            neural: NeuralConfig::default(),
            baseline: MotorParams::baseline(),
            gradcheck: GradcheckConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.plant.validate()?;
        self.excitation.validate()?;
        self.twin.validate()?;
        self.fit.validate()?;
        self.baseline.validate()?;
        if !self.initial_state.is_finite() {
            return Err(Error::InvalidConfig("initial_state must be finite".into()));
        }
        if self.segment_length == 0 {
            return Err(Error::InvalidConfig("segment_length must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig("train_fraction must lie in (0, 1)".into()));
        }
        if self.neural.hidden == 0 || !(self.neural.input_scale > 0.0) {
            return Err(Error::InvalidConfig("neural head needs hidden >= 1 and input_scale > 0".into()));
        }
        let g = &self.gradcheck;
        if g.cases == 0 || !(g.h_scale > 0.0) {
            return Err(Error::InvalidConfig("gradcheck needs cases >= 1 and h_scale > 0".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serialises");
        text.push('\n');
        text
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(inner) => Error::InvalidConfig(format!("{}: {inner}", path.display())),
            other => other,
        })
    }

    /// Applies `a.b.c=value` overrides. The value is parsed as JSON and falls
    /// back to a plain string; the key must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_leaf(&mut doc, key, value)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_leaf(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::IntegratorKind;

    #[test]
    fn round_trips_losslessly() {
        let mut cfg = RunConfig::default();
        cfg.plant.torque_limit = Some(7.5);
        cfg.fit.initial_params = MotorParams::new(0.1 / 3.0, 0.1, 1e-17);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn overrides_replace_leaves() {
        let cfg = RunConfig::default()
            .with_overrides(&[
                "fit.epochs=7",
                "fit.integrator=rk4",
                "excitation.num_modes.1=5",
                "plant.torque_limit=3.0",
            ])
            .unwrap();
        assert_eq!(cfg.fit.epochs, 7);
        assert_eq!(cfg.fit.integrator, IntegratorKind::Rk4);
        assert_eq!(cfg.excitation.num_modes, (3, 5));
        assert_eq!(cfg.plant.torque_limit, Some(3.0));
    }

    #[test]
    fn rejects_bad_overrides_and_values() {
        let base = RunConfig::default();
        assert!(base.with_overrides(&["fit.nope=1"]).is_err());
        assert!(base.with_overrides(&["fit.epochs"]).is_err());
        assert!(matches!(
            base.with_overrides(&["fit.epochs=0"]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(base.with_overrides(&["train_fraction=1.0"]).is_err());
        assert!(base.with_overrides(&["schema_version=9"]).is_err());
    }
}
