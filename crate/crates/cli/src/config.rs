use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use lqdst::presets::{self, Preset};
use lqdst::sim::InitMode;
use lqdst::TeamModel;

use crate::error::CliError;
use crate::files::parse_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Riccati,
    Pg,
    Npg,
    ZoPg,
    ZoNpg,
    Simulate,
}

impl Mode {
    pub fn is_model_free(self) -> bool {
        matches!(self, Mode::ZoPg | Mode::ZoNpg)
    }

    pub fn is_model_based(self) -> bool {
        matches!(self, Mode::Pg | Mode::Npg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitPolicyKind {
    Zero,
    /// Random stable policy drawn from the run seed.
    Random,
    /// Gains read from `--policy-file`.
    File,
    /// The preset's own initial policy.
    Preset,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "lqdst", version, about = "Deep structured LQ teams: Riccati oracle, policy gradient and zeroth-order learning")]
pub struct Cli {
    /// Built-in model and experiment settings.
    #[arg(long, value_parser = ["example1", "example2"], conflicts_with = "model", required_unless_present = "model")]
    pub preset: Option<String>,
    /// TOML model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Step size.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Gradient-norm stopping tolerance for model-based runs.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Perturbation samples per gradient estimate.
    #[arg(long = "samples-L")]
    pub samples: Option<usize>,
    /// Rollout horizon.
    #[arg(long = "rollout-T")]
    pub horizon: Option<usize>,
    /// Smoothing radius.
    #[arg(long = "radius-r")]
    pub radius: Option<f64>,
    /// Risk factor; overrides the model's.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds_count: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Defaults to the preset's initial policy when it has one, else zero.
    #[arg(long, value_enum)]
    pub init_policy: Option<InitPolicyKind>,
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    pub backtracking: Switch,
    #[arg(long, value_enum, default_value = "off")]
    pub antithetic: Switch,
    /// `gaussian` or `uniform:LOW:HIGH`; defaults to the preset's choice.
    #[arg(long)]
    pub init_state: Option<String>,
    /// Write the first seed's rollout as CSV (simulate mode).
    #[arg(long)]
    pub export_trajectory: Option<PathBuf>,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: String,
    pub model: TeamModel,
    pub preset: Option<Preset>,
    pub mode: Mode,
    pub eta: Option<f64>,
    pub iters: Option<usize>,
    pub tol: f64,
    pub samples: Option<usize>,
    pub horizon: Option<usize>,
    pub radius: Option<f64>,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub init_policy: InitPolicyKind,
    pub policy_file: Option<PathBuf>,
    pub backtracking: bool,
    pub antithetic: bool,
    pub init_state: InitMode,
    pub export_trajectory: Option<PathBuf>,
}

fn parse_init_state(text: &str) -> Result<InitMode, CliError> {
    let bad = || CliError::Config(format!("init-state: expected `gaussian` or `uniform:LOW:HIGH`, got `{text}`"));
    if text == "gaussian" {
        return Ok(InitMode::Gaussian);
    }
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["uniform", lo, hi] => {
            let low: f64 = lo.parse().map_err(|_| bad())?;
            let high: f64 = hi.parse().map_err(|_| bad())?;
            if !(low <= high) {
                return Err(bad());
            }
            Ok(InitMode::Uniform { low, high })
        }
        _ => Err(bad()),
    }
}

fn positive(name: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Config(format!("{name}: must be positive, got {x}"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_cli(cli: Cli) -> Result<ExperimentConfig, CliError> {
        let (source, model, preset) = match (&cli.preset, &cli.model) {
            (Some(name), None) => {
                let p = presets::by_name(name).ok_or_else(|| CliError::Config(format!("preset: unknown `{name}`")))?;
                (name.clone(), p.model.clone(), Some(p))
            }
            (None, Some(path)) => (path.display().to_string(), parse_model(path)?, None),
            _ => return Err(CliError::Config("exactly one of preset or model is required".into())),
        };
        let lambda = cli.lambda.unwrap_or(model.lambda);
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CliError::Config(format!("lambda: must be nonnegative, got {lambda}")));
        }
        if cli.mode.is_model_free() && lambda > 0.0 {
            return Err(CliError::Config(format!(
                "lambda: model-free modes are risk-neutral, got {lambda} (pass --lambda 0)"
            )));
        }
        positive("eta", cli.eta)?;
        positive("radius-r", cli.radius)?;
        if cli.seeds_count == 0 {
            return Err(CliError::Config("seeds-count: must be at least 1".into()));
        }
        let init_policy = match cli.init_policy {
            Some(InitPolicyKind::Preset) if preset.as_ref().and_then(|p| p.init_policy.as_ref()).is_none() => {
                return Err(CliError::Config("init-policy: no preset initial policy available".into()))
            }
            Some(kind) => kind,
            None if preset.as_ref().is_some_and(|p| p.init_policy.is_some()) => InitPolicyKind::Preset,
            None => InitPolicyKind::Zero,
        };
        if init_policy == InitPolicyKind::File && cli.policy_file.is_none() {
            return Err(CliError::Config("policy-file: required with --init-policy file".into()));
        }
        let init_state = match &cli.init_state {
            Some(text) => parse_init_state(text)?,
            None => preset.as_ref().map(|p| p.init).unwrap_or_default(),
        };
        let from_preset = |f: fn(&Preset) -> f64| preset.as_ref().map(f);
        let cfg = ExperimentConfig {
            source,
            eta: cli.eta.or(from_preset(|p| p.eta)),
            iters: cli.iters.or(preset.as_ref().map(|p| p.iters)),
            samples: cli.samples.or(preset.as_ref().map(|p| p.samples)),
            horizon: cli.horizon.or(preset.as_ref().map(|p| p.horizon)),
            radius: cli.radius.or(from_preset(|p| p.radius)),
            model,
            preset,
            mode: cli.mode,
            tol: cli.tol,
            lambda,
            seeds: (0..cli.seeds_count as u64).map(|k| cli.seed + k).collect(),
            out: cli.out,
            init_policy,
            policy_file: cli.policy_file,
            backtracking: cli.backtracking.on(),
            antithetic: cli.antithetic.on(),
            init_state,
            export_trajectory: cli.export_trajectory,
        };
        cfg.check_required()?;
        Ok(cfg)
    }

    fn check_required(&self) -> Result<(), CliError> {
        let missing = |name: &str| Err(CliError::Config(format!("{name}: required for mode {:?}", self.mode)));
        if self.mode.is_model_based() || self.mode.is_model_free() {
            if self.eta.is_none() {
                return missing("eta");
            }
            if self.iters.is_none() {
                return missing("iters");
            }
        }
        if self.mode.is_model_free() || self.mode == Mode::Simulate {
            if self.horizon.is_none() {
                return missing("rollout-T");
            }
            if self.horizon == Some(0) {
                return Err(CliError::Config("rollout-T: must be at least 1".into()));
            }
        }
        if self.mode.is_model_free() {
            if self.samples.is_none() {
                return missing("samples-L");
            }
            if self.radius.is_none() {
                return missing("radius-r");
            }
            if self.samples == Some(0) {
                return Err(CliError::Config("samples-L: must be at least 1".into()));
            }
        }
        Ok(())
    }
}
