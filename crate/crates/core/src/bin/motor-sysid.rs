use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motor_sysid::config::RunConfig;
use motor_sysid::run::{cmd_eval, cmd_fit, cmd_gen, cmd_gradcheck, EvalOptions, FitOptions};
use motor_sysid::{Error, Result};

/// Differentiable motor simulator and actuator parameter identification.
#[derive(Parser)]
#[command(name = "motor-sysid", version)]
struct Cli {
    /// Worker threads for per-segment parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration JSON; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a config leaf, e.g. `--set fit.epochs=200` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        base.with_overrides(&self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory dataset.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset output path.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Identify motor parameters from the training split of a dataset.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report JSON path.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-epoch CSV path.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Add a neural friction head to the initial parameters.
        #[arg(long)]
        neural: bool,
        /// Accept a dataset recorded for a different plant config.
        #[arg(long)]
        allow_plant_mismatch: bool,
    },
    /// Open-loop comparison of fitted and baseline parameters on held-out data.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit report or parameter JSON (default: the configured fit report).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Report JSON path.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Per-step error CSV path.
        #[arg(long)]
        errors: Option<PathBuf>,
        /// Evaluate the whole dataset rather than its test split.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        allow_plant_mismatch: bool,
    },
    /// Check reverse-mode gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        /// Report JSON path.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Include a neural friction head in every case.
        #[arg(long)]
        neural: bool,
        /// Use targets produced by the case parameters (all gradients vanish).
        #[arg(long)]
        zero_residual: bool,
        #[arg(long, hide = true)]
        corrupt_adjoint: Option<f64>,
    },
    /// Print the resolved run configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Gen { config, out } => {
            let mut cfg = config.resolve()?;
            if let Some(out) = out {
                cfg.paths.dataset = out;
            }
            let s = cmd_gen(&cfg)?;
            println!("wrote {} ({} samples, {:.3} s)", s.path.display(), s.samples, s.duration);
            println!("velocity range [{:.4}, {:.4}] rad/s", s.v_min, s.v_max);
            println!("sha256 {}", s.sha256);
        }
        Command::Fit {
            config,
            data,
            out,
            curve,
            neural,
            allow_plant_mismatch,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(p) = data {
                cfg.paths.dataset = p;
            }
            if let Some(p) = out {
                cfg.paths.fit_report = p;
            }
            if let Some(p) = curve {
                cfg.paths.fit_curve = p;
            }
            let opts = FitOptions {
                neural,
                allow_plant_mismatch,
            };
            let artifact = cmd_fit(&cfg, opts)?;
            let r = &artifact.report;
            let p = &r.best_params;
            println!(
                "loss {:.6e} -> {:.6e} ({:.1}% reduction, best epoch {})",
                r.initial_loss,
                r.best_loss,
                100.0 * r.loss_reduction,
                r.best_epoch
            );
            println!(
                "armature {:.6e}  damping {:.6e}  frictionloss {:.6e}",
                p.armature, p.damping, p.frictionloss
            );
            println!("wrote {} and {}", cfg.paths.fit_report.display(), cfg.paths.fit_curve.display());
            eprintln!("wall time {:.3} s ({:.3} ms/epoch)", r.wall_time_s, 1e3 * r.seconds_per_epoch());
        }
        Command::Eval {
            config,
            data,
            params,
            out,
            errors,
            full,
            allow_plant_mismatch,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(p) = data {
                cfg.paths.dataset = p;
            }
            if let Some(p) = out {
                cfg.paths.eval_report = p;
            }
            if let Some(p) = errors {
                cfg.paths.eval_errors = p;
            }
            let opts = EvalOptions {
                params,
                full,
                allow_plant_mismatch,
            };
            let artifact = cmd_eval(&cfg, &opts)?;
            let r = &artifact.report;
            let show = |m: &motor_sysid::sysid::ModelEval| match (m.q_mse, m.diverged_at) {
                (Some(mse), _) => format!("{mse:.6e}"),
                (None, Some(step)) => format!("diverged at step {step}"),
                (None, None) => "n/a".to_string(),
            };
            println!("q-MSE optimized {}  baseline {}", show(&r.optimized), show(&r.baseline));
            if let Some(ratio) = r.q_mse_ratio {
                println!("baseline / optimized = {ratio:.3}");
            }
            println!("wrote {} and {}", cfg.paths.eval_report.display(), cfg.paths.eval_errors.display());
        }
        Command::Gradcheck {
            config,
            out,
            neural,
            zero_residual,
            corrupt_adjoint,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(p) = out {
                cfg.paths.gradcheck_report = p;
            }
            cfg.gradcheck.neural |= neural;
            cfg.gradcheck.zero_residual |= zero_residual;
            let artifact = cmd_gradcheck(&cfg, corrupt_adjoint)?;
            let components: usize = artifact.cases.iter().map(|c| c.components.len()).sum();
            println!(
                "{} cases, {components} components, {} failures, max relative error {:.3e}, max |grad| {:.3e}",
                artifact.cases.len(),
                artifact.failures,
                artifact.max_relative_error,
                artifact.max_abs_gradient
            );
            println!("wrote {}", cfg.paths.gradcheck_report.display());
            if !artifact.passed {
                return Err(Error::CheckFailed(format!(
                    "{} gradient components disagree with finite differences",
                    artifact.failures
                )));
            }
        }
        Command::Config { config } => print!("{}", config.resolve()?.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
