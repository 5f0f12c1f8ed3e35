//! The four pipeline commands behind the `motor-sysid` binary. Each takes a
//! resolved [`RunConfig`], reads and writes the artifacts named in its
//! `paths` section and returns a summary for the caller to print.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{plant_config_hash, segment, split, Segment, TrajectoryDataset};
use crate::digest::sha256_hex;
use crate::dynamics::{Action, JointState, MotorParams};
use crate::error::{Error, Result};
use crate::excitation::generate_dataset;
use crate::gradients::{compare_gradients, finite_diff_grad, segment_loss_grad, ComponentCheck};
use crate::integrators::rollout;
use crate::neural_friction::NeuralFrictionHead;
use crate::sysid::{evaluate, fit, EvalReport, FitReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const TOOL: &str = concat!("motor-sysid ", env!("CARGO_PKG_VERSION"));

/// Content hash of a file consumed by a command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    fn of(role: &str, path: &Path, bytes: &[u8]) -> Self {
        Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub tool: String,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub schema_version: u32,
    pub tool: String,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    /// Which part of the dataset was evaluated: `"test"` or `"full"`.
    pub span: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub index: usize,
    pub params: MotorParams<f64>,
    pub loss: f64,
    pub components: Vec<ComponentCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckArtifact {
    pub schema_version: u32,
    pub tool: String,
    pub config: RunConfig,
    pub passed: bool,
    pub failures: usize,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
    pub cases: Vec<GradcheckCase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub path: PathBuf,
    pub samples: usize,
    pub duration: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub sha256: String,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Generates the synthetic dataset and writes it to `paths.dataset`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.excitation, cfg.initial_state, &cfg.twin, &cfg.plant)?;
    let mut bytes = Vec::new();
    data.write_to(&mut bytes)?;
    write_bytes(&cfg.paths.dataset, &bytes)?;
    let (v_min, v_max) = data
        .states
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.v), hi.max(s.v)));
    Ok(GenSummary {
        path: cfg.paths.dataset.clone(),
        samples: data.len(),
        duration: data.duration(),
        v_min,
        v_max,
        sha256: sha256_hex(&bytes),
    })
}

/// Loads a dataset, checks it was produced for this plant and brings it onto
/// the plant's time grid.
fn load_dataset(cfg: &RunConfig, path: &Path, allow_plant_mismatch: bool) -> Result<(TrajectoryDataset, InputDigest)> {
    let bytes = read_bytes(path)?;
    let data = TrajectoryDataset::read_from(bytes.as_slice())?;
    let expected = plant_config_hash(&cfg.plant);
    if !allow_plant_mismatch && data.metadata.plant_config_hash.as_deref() != Some(expected.as_str()) {
        return Err(Error::InvalidConfig(format!(
            "{} was recorded for plant config {} but the run config hashes to {expected}; \
             pass --allow-plant-mismatch to fit anyway",
            path.display(),
            data.metadata.plant_config_hash.as_deref().unwrap_or("<none>"),
        )));
    }
    let delta = cfg.plant.delta;
    let data = match data.uniform_delta() {
        Some(d) if (d - delta).abs() <= 1e-6 * delta => data,
        _ => crate::dataset::resample(&data, delta)?,
    };
    Ok((data, InputDigest::of("dataset", path, &bytes)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Add a seeded neural friction head to the initial parameters.
    pub neural: bool,
    pub allow_plant_mismatch: bool,
}

/// Fits the training split of `paths.dataset`; writes the report JSON and the
/// per-epoch CSV.
pub fn cmd_fit(cfg: &RunConfig, opts: FitOptions) -> Result<FitArtifact> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    if opts.neural && cfg.fit.initial_params.neural_friction.is_none() {
        let n = cfg.neural;
        cfg.fit.initial_params.neural_friction = Some(NeuralFrictionHead::seeded(n.hidden, n.input_scale, n.seed));
    }
    let (data, digest) = load_dataset(&cfg, &cfg.paths.dataset, opts.allow_plant_mismatch)?;
    let (train, _) = split(&data, cfg.train_fraction)?;
    let batch = segment(&train, cfg.segment_length)?;
    let report = fit(&batch, &cfg.plant, &cfg.fit)?;

    let mut curve = Vec::new();
    report.write_curve_csv(&mut curve)?;
    write_bytes(&cfg.paths.fit_curve, &curve)?;
    let artifact = FitArtifact {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: TOOL.to_string(),
        config: cfg.clone(),
        inputs: vec![digest],
        report,
    };
    write_json(&cfg.paths.fit_report, &artifact)?;
    Ok(artifact)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Fit report or bare parameter JSON; defaults to `paths.fit_report`.
    pub params: Option<PathBuf>,
    /// Evaluate the whole dataset instead of its test split.
    pub full: bool,
    pub allow_plant_mismatch: bool,
}

/// Reads parameters from a fit report (its best parameters) or a bare
/// `MotorParams` document.
pub fn load_params(path: &Path) -> Result<(MotorParams<f64>, InputDigest)> {
    let bytes = read_bytes(path)?;
    let digest = InputDigest::of("params", path, &bytes);
    if let Ok(artifact) = serde_json::from_slice::<FitArtifact>(&bytes) {
        return Ok((artifact.report.best_params, digest));
    }
    let params: MotorParams<f64> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::InvalidConfig(format!("{}: neither a fit report nor motor parameters: {e}", path.display())))?;
    params.validate()?;
    Ok((params, digest))
}

/// Open-loop comparison of fitted and baseline parameters on held-out data.
pub fn cmd_eval(cfg: &RunConfig, opts: &EvalOptions) -> Result<EvalArtifact> {
    cfg.validate()?;
    let params_path = opts.params.clone().unwrap_or_else(|| cfg.paths.fit_report.clone());
    let (params, params_digest) = load_params(&params_path)?;
    let (data, data_digest) = load_dataset(cfg, &cfg.paths.dataset, opts.allow_plant_mismatch)?;
    let test = if opts.full {
        data
    } else {
        split(&data, cfg.train_fraction)?.1
    };
    let report = evaluate(&test, &params, &cfg.baseline, &cfg.plant, cfg.fit.integrator)?;

    let mut errors = Vec::new();
    report.write_error_csv(&mut errors)?;
    write_bytes(&cfg.paths.eval_errors, &errors)?;
    let artifact = EvalArtifact {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: TOOL.to_string(),
        config: cfg.clone(),
        inputs: vec![data_digest, params_digest],
        span: if opts.full { "full" } else { "test" }.to_string(),
        report,
    };
    write_json(&cfg.paths.eval_report, &artifact)?;
    Ok(artifact)
}

/// Random parameters and segment for one gradient-check case.
fn gradcheck_case(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<(MotorParams<f64>, Segment<f64>)> {
    let g = &cfg.gradcheck;
    let mut params = MotorParams::new(
        rng.random_range(0.005..0.05),
        rng.random_range(0.0..0.3),
        rng.random_range(0.0..0.2),
    );
    if g.neural {
        let n = cfg.neural;
        let mut head = NeuralFrictionHead::zeros(n.hidden, n.input_scale);
        // Every weight is kept away from zero so that each component's
        // sensitivity sits well above the finite-difference noise floor.
        head.weights.iter_mut().for_each(|w| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            *w = sign * rng.random_range(0.5..1.5);
        });
        params = params.with_neural_friction(head);
    }
    let speed = if g.neural { rng.random_range(0.5..3.0) } else { rng.random_range(0.0..3.0) };
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let s0 = JointState::new(rng.random_range(-1.0..1.0), sign * speed);
    let actions: Vec<Action<f64>> = (0..cfg.segment_length)
        .map(|_| Action::new(s0.q + rng.random_range(-0.5..0.5)))
        .collect();
    // targets come from nearby parameters, as they would late in a fit
    let source = if g.zero_residual {
        params.clone()
    } else {
        let mut p = params.clone();
        p.armature *= rng.random_range(0.8..1.2);
        p.damping *= rng.random_range(0.8..1.2);
        p.frictionloss *= rng.random_range(0.8..1.2);
        p
    };
    let targets = rollout(s0, &actions, &source, &cfg.plant, cfg.fit.integrator)?.states[1..].to_vec();
    Ok((
        params,
        Segment {
            s0,
            actions,
            targets,
            start: 0,
        },
    ))
}

/// Compares reverse-mode gradients with finite differences on random cases.
/// `corrupt_adjoint` scales every analytic component by `1 + factor` and
/// exists to exercise the failure path.
pub fn gradcheck(cfg: &RunConfig, corrupt_adjoint: Option<f64>) -> Result<GradcheckArtifact> {
    cfg.validate()?;
    let g = &cfg.gradcheck;
    let kind = cfg.fit.integrator;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut cases = Vec::with_capacity(g.cases);
    for index in 0..g.cases {
        let (params, seg) = gradcheck_case(cfg, &mut rng)?;
        let (loss, mut analytic) = segment_loss_grad(&seg, &params, &cfg.plant, kind)?;
        if let Some(factor) = corrupt_adjoint {
            let scaled: Vec<f64> = analytic.to_vector().iter().map(|x| x * (1.0 + factor)).collect();
            analytic = crate::gradients::ParamGradient::from_vector(&scaled, analytic.d_neural.is_some());
        }
        let numeric = finite_diff_grad(std::slice::from_ref(&seg), &params, &cfg.plant, kind, g.h_scale)?;
        cases.push(GradcheckCase {
            index,
            params,
            loss,
            components: compare_gradients(&analytic, &numeric, &g.tolerance),
        });
    }
    let all = || cases.iter().flat_map(|c| &c.components);
    let failures = all().filter(|c| !c.pass).count();
    let max_relative_error = all().filter(|c| !c.absolute).map(|c| c.error).fold(0.0, f64::max);
    let max_abs_gradient = all().map(|c| c.analytic.abs()).fold(0.0, f64::max);
    Ok(GradcheckArtifact {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: TOOL.to_string(),
        config: cfg.clone(),
        passed: failures == 0,
        failures,
        max_relative_error,
        max_abs_gradient,
        cases,
    })
}

/// [`gradcheck`], with the report written to `paths.gradcheck_report`.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt_adjoint: Option<f64>) -> Result<GradcheckArtifact> {
    let artifact = gradcheck(cfg, corrupt_adjoint)?;
    write_json(&cfg.paths.gradcheck_report, &artifact)?;
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.excitation.duration = 2.0;
        cfg.fit.epochs = 5;
        cfg.gradcheck.cases = 3;
        cfg.paths = crate::config::Paths {
            dataset: dir.join("data.csv"),
            fit_report: dir.join("fit.json"),
            fit_curve: dir.join("fit.csv"),
            eval_report: dir.join("eval.json"),
            eval_errors: dir.join("eval.csv"),
            gradcheck_report: dir.join("grad.json"),
        };
        cfg
    }

    #[test]
    fn pipeline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let summary = cmd_gen(&cfg).unwrap();
        assert_eq!(summary.samples, 2001);
        let fitted = cmd_fit(&cfg, FitOptions::default()).unwrap();
        assert_eq!(fitted.report.curve.len(), 6);
        assert_eq!(fitted.inputs[0].sha256, summary.sha256);
        let eval = cmd_eval(&cfg, &EvalOptions::default()).unwrap();
        assert_eq!(eval.report.optimized.params, fitted.report.best_params);
        assert_eq!(eval.report.samples, 400);
    }

    #[test]
    fn plant_mismatch_needs_override() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        cmd_gen(&cfg).unwrap();
        let mut other = cfg.clone();
        other.plant.kp = 25.0;
        let err = cmd_fit(&other, FitOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let opts = FitOptions {
            allow_plant_mismatch: true,
            ..Default::default()
        };
        assert!(cmd_fit(&other, opts).is_ok());
    }

    #[test]
    fn gradcheck_passes_and_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        assert!(cmd_gradcheck(&cfg, None).unwrap().passed);
        let bad = cmd_gradcheck(&cfg, Some(1e-3)).unwrap();
        assert!(!bad.passed);
        assert!(bad.failures > 0);
    }
}
