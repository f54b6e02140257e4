//! Run configuration: a TOML file layered over per-command presets, with
//! `section.field=value` overrides applied last.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::optweights::NodeSearchConfig;
use crate::problems::{FunctionClass, FunctionClassSpec, OdeSystem};
use crate::rl::{ActionSet, InitialCondition, RewardConfig, RewardVariant, TrainConfig};
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RLSTEP_OUT_DIR";
/// Fallback when neither the command line, the config nor the environment name one.
pub const DEFAULT_OUT_DIR: &str = "rlstep-out";
/// File the resolved configuration is echoed to.
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

pub const SINE_ACTIONS: [f64; 8] = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.75];
pub const SINE_TOL: f64 = 5e-4;
pub const BROKEN_POLY_ACTIONS: [f64; 8] = [0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.3, 0.67];
pub const BROKEN_POLY_TOL: f64 = 7.5e-6;
pub const LORENZ_ACTIONS: [f64; 8] = [0.025, 0.029, 0.033, 0.039, 0.045, 0.052, 0.060, 0.070];
pub const LORENZ_TOL: f64 = 1e-4;
pub const PENDULUM_ACTIONS: [f64; 10] = [0.25, 0.27, 0.29, 0.31, 0.33, 0.36, 0.39, 0.42, 0.45, 0.48];
pub const PENDULUM_TOL: f64 = 1e-5;
pub const PENDULUM_CONSTANT_STEPS: [f64; 5] = [0.1, 0.05, 0.01, 0.005, 0.001];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    TrainQuad,
    TrainOde,
    TrainMeta,
    BenchQuad,
    BenchOde,
    Weights,
    Trace,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::TrainQuad => "train-quad",
            Self::TrainOde => "train-ode",
            Self::TrainMeta => "train-meta",
            Self::BenchQuad => "bench-quad",
            Self::BenchOde => "bench-ode",
            Self::Weights => "weights",
            Self::Trace => "trace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSection {
    pub class: String,
    pub domain: Option<[f64; 2]>,
    /// Empty selects the class default.
    pub actions: Vec<f64>,
    pub tol: Option<f64>,
    pub reward: RewardVariant,
    pub memory: usize,
}

impl Default for QuadSection {
    fn default() -> Self {
        Self {
            class: "superposed_sines5".into(),
            domain: None,
            actions: Vec::new(),
            tol: None,
            reward: RewardVariant::Piecewise,
            memory: 0,
        }
    }
}

impl QuadSection {
    pub fn spec(&self) -> Result<FunctionClassSpec> {
        let class = FunctionClass::parse(&self.class)?;
        let spec = match self.domain {
            Some([a, b]) => FunctionClassSpec::new(class).with_domain(a, b),
            None => FunctionClassSpec::new(class),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn is_broken(&self) -> bool {
        matches!(FunctionClass::parse(&self.class), Ok(FunctionClass::BrokenPoly5))
    }

    pub fn action_set(&self) -> Result<ActionSet> {
        let steps = match (self.actions.is_empty(), self.is_broken()) {
            (false, _) => self.actions.clone(),
            (true, true) => BROKEN_POLY_ACTIONS.to_vec(),
            (true, false) => SINE_ACTIONS.to_vec(),
        };
        ActionSet::new(steps).map_err(|e| field_error("quad.actions", e))
    }

    pub fn reward_config(&self) -> Result<RewardConfig> {
        let tol = self.tol.unwrap_or(if self.is_broken() { BROKEN_POLY_TOL } else { SINE_TOL });
        RewardConfig::new(tol, self.reward).map_err(|e| field_error("quad.tol", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSection {
    pub system: String,
    /// Evaluation horizon.
    pub t_span: Option<[f64; 2]>,
    /// Horizon of training episodes.
    pub train_t_span: Option<[f64; 2]>,
    pub initial: Option<InitialCondition>,
    pub actions: Vec<f64>,
    pub tol: Option<f64>,
    pub reward: RewardVariant,
    pub memory: usize,
}

impl Default for OdeSection {
    fn default() -> Self {
        Self {
            system: "lorenz".into(),
            t_span: None,
            train_t_span: None,
            initial: None,
            actions: Vec::new(),
            tol: None,
            reward: RewardVariant::Piecewise,
            memory: 0,
        }
    }
}

impl OdeSection {
    pub fn system(&self) -> Result<OdeSystem> {
        OdeSystem::parse(&self.system).map_err(|e| field_error("ode.system", e))
    }

    fn is_lorenz(&self) -> bool {
        matches!(self.system(), Ok(OdeSystem::Lorenz { .. }))
    }

    pub fn t_span(&self) -> Result<(f64, f64)> {
        let [a, b] = self.t_span.unwrap_or(if self.is_lorenz() { [0.0, 200.0] } else { [0.0, 50.0] });
        check_span("ode.t_span", a, b)
    }

    pub fn train_t_span(&self) -> Result<(f64, f64)> {
        match self.train_t_span {
            Some([a, b]) => check_span("ode.train_t_span", a, b),
            None if self.is_lorenz() => self.t_span(),
            // Damped phase before the first switch.
            None => Ok((0.0, 16.0)),
        }
    }

    pub fn initial(&self) -> Result<InitialCondition> {
        let sys = self.system()?;
        let ic = self.initial.clone().unwrap_or(InitialCondition::Fixed { x0: sys.initial_condition() });
        match &ic {
            InitialCondition::Fixed { x0 } if x0.len() != sys.state_dim() => Err(Error::Config(format!(
                "ode.initial: x0 has {} components, the system has {}",
                x0.len(),
                sys.state_dim()
            ))),
            InitialCondition::UniformBox { lo, hi } if !(lo < hi) => {
                Err(Error::Config(format!("ode.initial: empty box [{lo}, {hi}]")))
            }
            _ => Ok(ic),
        }
    }

    pub fn action_set(&self) -> Result<ActionSet> {
        let steps = match (self.actions.is_empty(), self.is_lorenz()) {
            (false, _) => self.actions.clone(),
            (true, true) => LORENZ_ACTIONS.to_vec(),
            (true, false) => PENDULUM_ACTIONS.to_vec(),
        };
        ActionSet::new(steps).map_err(|e| field_error("ode.actions", e))
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(if self.is_lorenz() { LORENZ_TOL } else { PENDULUM_TOL })
    }

    pub fn reward_config(&self) -> Result<RewardConfig> {
        RewardConfig::new(self.tol(), self.reward).map_err(|e| field_error("ode.tol", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    /// Trained member of the pool; trained from the `ode` and `training` sections when absent.
    pub base_checkpoint: Option<PathBuf>,
    pub constants: Vec<f64>,
    pub reward: RewardVariant,
    pub training: TrainConfig,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            base_checkpoint: None,
            constants: PENDULUM_CONSTANT_STEPS.to_vec(),
            reward: RewardVariant::Log,
            training: TrainConfig {
                max_episodes: 1000,
                min_episodes: 1000,
                minibatch: 64,
                epochs: 2,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Functions (quadrature) or random initial conditions (ODE, when `random_ics > 0`).
    pub samples: usize,
    pub checkpoints: Vec<PathBuf>,
    pub meta_checkpoint: Option<PathBuf>,
    pub simpson_steps: Vec<f64>,
    pub subdivision_budgets: Vec<usize>,
    pub rk45_tols: Vec<f64>,
    /// Number of random initial conditions; 0 uses the configured one.
    pub random_ics: usize,
    pub ic_box: [f64; 2],
    pub write_step_logs: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            samples: 5000,
            checkpoints: Vec::new(),
            meta_checkpoint: None,
            simpson_steps: vec![0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2, 0.25, 0.3, 0.4],
            subdivision_budgets: vec![41, 61, 81, 101, 121, 161, 201, 301, 401],
            rk45_tols: vec![1e-5, 2e-5, 3e-5, 5e-5, 1e-4, 2e-4, 5e-4],
            random_ics: 0,
            ic_box: [-10.0, 10.0],
            write_step_logs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    /// Least-squares weights at the configured nodes.
    Fit,
    /// Error surface over node positions.
    Grid,
    /// Nelder-Mead over node positions starting from the configured nodes.
    Optimize,
    /// Closed-form single-node curve for quadratics.
    OneNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub mode: WeightsMode,
    pub class: String,
    pub domain: Option<[f64; 2]>,
    pub nodes: Vec<f64>,
    pub samples: usize,
    /// Extra fresh samples, as a fraction of `samples`, for held-out errors; 0 disables.
    pub holdout: f64,
    pub n_nodes: usize,
    /// Grid points per axis; 0 selects 500 for one node and 50 for two.
    pub resolution: usize,
    pub grid_samples: usize,
    pub search: NodeSearchConfig,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self {
            mode: WeightsMode::Fit,
            class: "poly_deg4".into(),
            domain: None,
            nodes: vec![0.0, 0.5, 1.0],
            samples: 100_000,
            holdout: 0.0,
            n_nodes: 1,
            resolution: 0,
            grid_samples: 2000,
            search: NodeSearchConfig::default(),
        }
    }
}

impl WeightsSection {
    pub fn spec(&self) -> Result<FunctionClassSpec> {
        let class = FunctionClass::parse(&self.class).map_err(|e| field_error("weights.class", e))?;
        let spec = match self.domain {
            Some([a, b]) => FunctionClassSpec::new(class).with_domain(a, b),
            None => FunctionClassSpec::new(class),
        };
        spec.validate().map_err(|e| field_error("weights.domain", e))?;
        Ok(spec)
    }

    pub fn grid_resolution(&self) -> usize {
        match (self.resolution, self.n_nodes) {
            (0, 1) => 500,
            (0, _) => 50,
            (r, _) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Quad,
    Ode,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub kind: TraceKind,
    pub checkpoint: Option<PathBuf>,
    /// Seed of the integrand drawn for quadrature traces.
    pub function_seed: u64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { kind: TraceKind::Quad, checkpoint: None, function_seed: 0 }
    }
}

/// Everything a subcommand reads. Sections a command does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub quad: QuadSection,
    pub ode: OdeSection,
    pub training: TrainConfig,
    pub meta: MetaSection,
    pub bench: BenchSection,
    pub weights: WeightsSection,
    pub trace: TraceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            quad: QuadSection::default(),
            ode: OdeSection::default(),
            training: TrainConfig::default(),
            meta: MetaSection::default(),
            bench: BenchSection::default(),
            weights: WeightsSection::default(),
            trace: TraceSection::default(),
        }
    }
}

impl RunConfig {
    /// Defaults tuned for each command.
    pub fn preset(cmd: Command) -> Self {
        let mut cfg = Self::default();
        match cmd {
            Command::TrainQuad | Command::BenchQuad => {
                cfg.training = TrainConfig { max_episodes: 3000, min_episodes: 1500, epochs: 2, ..TrainConfig::default() };
            }
            Command::TrainOde | Command::BenchOde => {
                cfg.training = TrainConfig {
                    max_episodes: 300,
                    min_episodes: 150,
                    minibatch: 32,
                    epochs: 2,
                    ..TrainConfig::default()
                };
            }
            Command::TrainMeta => {
                cfg.ode.system = "hybrid_pendulum".into();
                cfg.training = TrainConfig {
                    max_episodes: 100,
                    min_episodes: 100,
                    minibatch: 64,
                    epochs: 2,
                    ..TrainConfig::default()
                };
            }
            Command::Weights => {}
            Command::Trace => {}
        }
        cfg
    }

    /// Preset, then the optional file, then `key=value` overrides.
    pub fn load(cmd: Command, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::preset(cmd))
            .map_err(|e| Error::Config(format!("cannot encode preset: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
                _ => Error::Io(e),
            })?;
            let user: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, user);
        }
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.quad.spec().map_err(|e| field_error("quad.class", e))?;
        self.quad.action_set()?;
        self.quad.reward_config()?;
        self.ode.t_span()?;
        self.ode.train_t_span()?;
        self.ode.initial()?;
        self.ode.action_set()?;
        self.ode.reward_config()?;
        self.training.validate().map_err(|e| field_error("training", e))?;
        self.meta.training.validate().map_err(|e| field_error("meta.training", e))?;
        if self.meta.constants.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Config("meta.constants: step sizes must be positive".into()));
        }
        let b = &self.bench;
        if b.simpson_steps.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Config("bench.simpson_steps: step sizes must be positive".into()));
        }
        if b.subdivision_budgets.iter().any(|&n| n < 5) {
            return Err(Error::Config("bench.subdivision_budgets: budgets must be at least 5".into()));
        }
        if b.rk45_tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("bench.rk45_tols: tolerances must be positive".into()));
        }
        if !(b.ic_box[0] < b.ic_box[1]) {
            return Err(Error::Config("bench.ic_box: lower bound must be below upper bound".into()));
        }
        let w = &self.weights;
        w.spec()?;
        if !(0.0..=10.0).contains(&w.holdout) {
            return Err(Error::Config(format!("weights.holdout must lie in [0, 10], got {}", w.holdout)));
        }
        if w.nodes.is_empty() {
            return Err(Error::Config("weights.nodes must not be empty".into()));
        }
        if !(1..=2).contains(&w.n_nodes) {
            return Err(Error::Config(format!("weights.n_nodes must be 1 or 2, got {}", w.n_nodes)));
        }
        Ok(())
    }

    /// Command line, then config file, then the environment, then the fallback.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode configuration: {e}")))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

fn field_error(field: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) if msg.starts_with(field) => Error::Config(msg),
        Error::Config(msg) => Error::Config(format!("{field}: {msg}")),
        other => other,
    }
}

fn check_span(field: &str, a: f64, b: f64) -> Result<(f64, f64)> {
    if a.is_finite() && b.is_finite() && a < b {
        Ok((a, b))
    } else {
        Err(Error::Config(format!("{field}: [{a}, {b}] is not an interval")))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a bare string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {item:?}")))?;
    let mut node = table;
    for p in parts {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
