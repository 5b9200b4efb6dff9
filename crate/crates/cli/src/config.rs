//! Experiment files: INI-style `[section]` headers, `key = value` lines and
//! `#` comments. Keys before the first header belong to `[run]`.
//!
//! Every key is checked against a fixed schema; unknown keys, unknown
//! registry names and out-of-range values are errors that carry the line
//! number.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use tamopt_core::bench::{Goal, Problem, DEFAULT_EPOCHS_PER_TASK, DEFAULT_N_ALPHA};
use tamopt_core::gradcheck::{DEFAULT_STEP, DEFAULT_TOLERANCE};
use tamopt_core::landscapes::{LandscapeSpec, Quadratic};
use tamopt_core::nn::{make_gaussian_mixture, Dataset, MlpSpec};
use tamopt_core::optim::Damping;
use tamopt_core::vecmath::split_seed;
use tamopt_core::{HyperParams, OptimizerKind, ParamVector, RngStream};

/// Weight decay implied by the `adamw` / `adatamw` aliases.
pub const DEFAULT_DECOUPLED_DECAY: f64 = 1e-2;

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "run",
        &[
            "optimizer",
            "landscape",
            "model",
            "steps",
            "seed",
            "seeds",
            "batch_size",
            "telemetry_every",
        ],
    ),
    (
        "hyperparameters",
        &[
            "eta",
            "beta",
            "gamma",
            "epsilon",
            "beta2",
            "c",
            "weight_decay",
            "damping",
            "s_hat0",
        ],
    ),
    (
        "landscape",
        &[
            "dim",
            "curvature",
            "curvature_min",
            "curvature_max",
            "center",
            "theta0",
            "base",
            "sigma",
            "kappa",
            "period",
        ],
    ),
    ("model", &["layers", "init_seed"]),
    ("data", &["classes", "dim", "per_class", "spread", "seed", "csv"]),
    ("online", &["tasks", "delta", "epochs_per_task"]),
    ("warmup", &["switch_step"]),
    ("barrier", &["n_alpha", "spawn_step", "train_steps", "seed_a", "seed_b"]),
    ("grid", &["param", "values", "metric", "goal"]),
    ("gradcheck", &["points", "step", "tolerance"]),
    ("output", &["dir"]),
];

const OPTIMIZER_NAMES: &[&str] = &[
    "sgd", "sgdm", "tam", "adam", "adatam", "adatam2", "adamw", "adatamw",
];
const LANDSCAPE_NAMES: &[&str] = &["quadratic", "rosenbrock", "noisy", "alternating_adversary"];
const BASE_NAMES: &[&str] = &["quadratic", "rosenbrock"];
const MODEL_NAMES: &[&str] = &["mlp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    MissingFile {
        path: PathBuf,
        reason: String,
    },
    Syntax {
        line: usize,
        message: String,
    },
    /// Unknown section, key or registry name.
    UnknownKey {
        line: usize,
        key: String,
        expected: Vec<String>,
    },
    OutOfRange {
        line: usize,
        key: String,
        value: String,
        range: String,
    },
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        expected: String,
    },
    /// A required key is absent, or the file combines keys inconsistently.
    Missing {
        key: String,
        message: String,
    },
}

impl ConfigError {
    /// Stable machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::MissingFile { .. } => "missing_file",
            ConfigError::Syntax { .. } => "syntax",
            ConfigError::UnknownKey { .. } => "unknown_key",
            ConfigError::OutOfRange { .. } => "out_of_range",
            ConfigError::InvalidValue { .. } => "invalid_value",
            ConfigError::Missing { .. } => "missing_key",
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::OutOfRange { line, .. }
            | ConfigError::InvalidValue { line, .. } => Some(*line),
            _ => None,
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::OutOfRange { key, .. }
            | ConfigError::InvalidValue { key, .. }
            | ConfigError::Missing { key, .. } => Some(key),
            _ => None,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::MissingFile { path, reason } => {
                write!(f, "cannot read config `{}`: {reason}", path.display())
            }
            ConfigError::Syntax { line, message } => write!(f, "line {line}: {message}"),
            ConfigError::UnknownKey {
                line,
                key,
                expected,
            } => write!(
                f,
                "line {line}: unknown key `{key}` (expected one of: {})",
                expected.join(", ")
            ),
            ConfigError::OutOfRange {
                line,
                key,
                value,
                range,
            } => write!(f, "line {line}: `{key}` = {value} is outside {range}"),
            ConfigError::InvalidValue {
                line,
                key,
                value,
                expected,
            } => write!(f, "line {line}: `{key}` = `{value}` is not {expected}"),
            ConfigError::Missing { key, message } => write!(f, "`{key}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section → key → value` map after syntax and schema checks.
#[derive(Debug, Clone, Default)]
struct Ini {
    entries: BTreeMap<(String, String), Entry>,
}

fn parse_ini(text: &str) -> Result<Ini> {
    let mut ini = Ini::default();
    let mut section = "run".to_string();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("unterminated section header `{content}`"),
            })?;
            let name = name.trim();
            if !SCHEMA.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: name.to_string(),
                    expected: SCHEMA.iter().map(|(s, _)| format!("[{s}]")).collect(),
                });
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: "empty key".into(),
            });
        }
        let allowed = SCHEMA
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, keys)| *keys)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
                expected: allowed.iter().map(|k| k.to_string()).collect(),
            });
        }
        let slot = (section.clone(), key.to_string());
        if let Some(prev) = ini.entries.get(&slot) {
            return Err(ConfigError::Syntax {
                line,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        }
        ini.entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(ini)
}

/// Typed accessors over an [`Ini`]; each records the line of the value.
impl Ini {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.get(section, key).is_some()
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.get(section, key).map_or(0, |e| e.line)
    }

    fn float(&self, section: &str, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        parse_float(key, &e.value, e.line).map(Some)
    }

    fn float_in(&self, section: &str, key: &str, range: Range) -> Result<Option<f64>> {
        let v = self.float(section, key)?;
        if let Some(x) = v {
            range.check(key, x, self.line_of(section, key))?;
        }
        Ok(v)
    }

    fn int(&self, section: &str, key: &str, min: u64) -> Result<Option<u64>> {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        let v: u64 = e.value.parse().map_err(|_| ConfigError::InvalidValue {
            line: e.line,
            key: key.into(),
            value: e.value.clone(),
            expected: "a non-negative integer".into(),
        })?;
        if v < min {
            return Err(ConfigError::OutOfRange {
                line: e.line,
                key: key.into(),
                value: e.value.clone(),
                range: format!("[{min}, inf)"),
            });
        }
        Ok(Some(v))
    }

    fn float_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| parse_float(key, s.trim(), e.line))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn usize_list(&self, section: &str, key: &str) -> Result<Option<Vec<usize>>> {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| {
                let s = s.trim();
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v),
                    Ok(_) => Err(ConfigError::OutOfRange {
                        line: e.line,
                        key: key.into(),
                        value: s.into(),
                        range: "[1, inf)".into(),
                    }),
                    Err(_) => Err(ConfigError::InvalidValue {
                        line: e.line,
                        key: key.into(),
                        value: s.into(),
                        expected: "a comma-separated list of positive integers".into(),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Value that must be one of `names`.
    fn name(&self, section: &str, key: &str, names: &[&str]) -> Result<Option<(String, usize)>> {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        if !names.contains(&e.value.as_str()) {
            return Err(ConfigError::UnknownKey {
                line: e.line,
                key: e.value.clone(),
                expected: names.iter().map(|s| s.to_string()).collect(),
            });
        }
        Ok(Some((e.value.clone(), e.line)))
    }
}

fn parse_float(key: &str, value: &str, line: usize) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ConfigError::InvalidValue {
            line,
            key: key.into(),
            value: value.into(),
            expected: "a finite number".into(),
        }),
    }
}

#[derive(Debug, Clone, Copy)]
enum Range {
    /// `[lo, hi]`
    Closed(f64, f64),
    /// `[lo, hi)`
    HalfOpen(f64, f64),
    /// `[lo, inf)`
    AtLeast(f64),
    /// `(lo, inf)`
    Above(f64),
}

impl Range {
    fn contains(self, x: f64) -> bool {
        match self {
            Range::Closed(lo, hi) => lo <= x && x <= hi,
            Range::HalfOpen(lo, hi) => lo <= x && x < hi,
            Range::AtLeast(lo) => lo <= x,
            Range::Above(lo) => lo < x,
        }
    }

    fn check(self, key: &str, x: f64, line: usize) -> Result<()> {
        if self.contains(x) {
            return Ok(());
        }
        Err(ConfigError::OutOfRange {
            line,
            key: key.into(),
            value: format!("{x}"),
            range: self.to_string(),
        })
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Range::Closed(lo, hi) => write!(f, "[{lo},{hi}]"),
            Range::HalfOpen(lo, hi) => write!(f, "[{lo},{hi})"),
            Range::AtLeast(lo) => write!(f, "[{lo},inf)"),
            Range::Above(lo) => write!(f, "({lo},inf)"),
        }
    }
}

/// Hyperparameter varied by `gridsearch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridParam {
    Eta,
    Beta,
    Gamma,
    Epsilon,
    WeightDecay,
}

impl GridParam {
    const NAMES: &'static [&'static str] = &["eta", "beta", "gamma", "epsilon", "weight_decay"];

    pub fn name(self) -> &'static str {
        match self {
            GridParam::Eta => "eta",
            GridParam::Beta => "beta",
            GridParam::Gamma => "gamma",
            GridParam::Epsilon => "epsilon",
            GridParam::WeightDecay => "weight_decay",
        }
    }

    fn from_name(s: &str) -> Self {
        match s {
            "eta" => GridParam::Eta,
            "beta" => GridParam::Beta,
            "gamma" => GridParam::Gamma,
            "epsilon" => GridParam::Epsilon,
            _ => GridParam::WeightDecay,
        }
    }

    pub fn apply(self, hp: HyperParams, value: f64) -> HyperParams {
        match self {
            GridParam::Eta => hp.with_eta(value),
            GridParam::Beta => hp.with_beta(value),
            GridParam::Gamma => hp.with_gamma(value),
            GridParam::Epsilon => hp.with_epsilon(value),
            GridParam::WeightDecay => hp.with_weight_decay(value),
        }
    }
}

/// Quantity a grid search ranks configurations by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Clean objective after the last step.
    FinalLoss,
    /// Full-dataset accuracy after the last step (MLP only).
    FinalAccuracy,
    /// Mean online accuracy of the label-flip benchmark (MLP only).
    OnlineAccuracy,
}

impl Metric {
    const NAMES: &'static [&'static str] = &["final_loss", "final_accuracy", "online_accuracy"];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FinalLoss => "final_loss",
            Metric::FinalAccuracy => "final_accuracy",
            Metric::OnlineAccuracy => "online_accuracy",
        }
    }

    fn from_name(s: &str) -> Self {
        match s {
            "final_loss" => Metric::FinalLoss,
            "final_accuracy" => Metric::FinalAccuracy,
            _ => Metric::OnlineAccuracy,
        }
    }

    pub fn default_goal(self) -> Goal {
        match self {
            Metric::FinalLoss => Goal::Minimize,
            _ => Goal::Maximize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSection {
    pub tasks: usize,
    pub delta: f64,
    pub epochs_per_task: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSection {
    pub n_alpha: usize,
    /// Shared training steps before the two copies split.
    pub spawn_step: u64,
    /// Steps each copy trains after the split.
    pub train_steps: u64,
    pub seed_a: Option<u64>,
    pub seed_b: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub param: GridParam,
    pub values: Vec<f64>,
    pub metric: Metric,
    pub goal: Goal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSection {
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
}

/// A fully validated experiment with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    /// Registry name as written (`adamw` stays `adamw`).
    pub optimizer_name: String,
    pub optimizer: OptimizerKind,
    pub hp: HyperParams,
    pub s_hat0: f64,
    pub problem: Problem,
    pub steps: u64,
    pub seed: u64,
    pub seeds: usize,
    pub batch_size: usize,
    pub telemetry_every: u64,
    pub online: OnlineSection,
    pub switch_step: Option<u64>,
    pub barrier: BarrierSection,
    pub grid: Option<GridSection>,
    pub gradcheck: GradcheckSection,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentFile {
    pub fn is_mlp(&self) -> bool {
        matches!(self.problem, Problem::Mlp { .. })
    }
}

/// Reads and validates an experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentFile> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::MissingFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

/// Parses experiment text; relative data paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentFile> {
    let ini = parse_ini(text)?;

    let (optimizer_name, _) = ini
        .name("run", "optimizer", OPTIMIZER_NAMES)?
        .ok_or_else(|| missing("optimizer", "required"))?;
    let (optimizer, implied_decay) = match optimizer_name.as_str() {
        "adamw" => (OptimizerKind::Adam, DEFAULT_DECOUPLED_DECAY),
        "adatamw" => (OptimizerKind::AdaTam, DEFAULT_DECOUPLED_DECAY),
        other => (other.parse().expect("registry name"), 0.0),
    };

    let hp = parse_hyperparams(&ini, implied_decay)?;
    let s_hat0 = ini
        .float_in("hyperparameters", "s_hat0", Range::Closed(-1.0, 1.0))?
        .unwrap_or(0.0);

    let steps = ini.int("run", "steps", 1)?.unwrap_or(100);
    let seed = ini.int("run", "seed", 0)?.unwrap_or(0);
    let seeds = ini.int("run", "seeds", 1)?.unwrap_or(1) as usize;
    let batch_size = ini.int("run", "batch_size", 1)?.unwrap_or(32) as usize;
    let telemetry_every = ini.int("run", "telemetry_every", 1)?.unwrap_or(1);

    let landscape = ini.name("run", "landscape", LANDSCAPE_NAMES)?;
    let model = ini.name("run", "model", MODEL_NAMES)?;
    let problem = match (landscape, model) {
        (Some((name, _)), None) => parse_landscape(&ini, &name)?,
        (None, Some(_)) => parse_mlp(&ini, seed, batch_size, base_dir)?,
        (Some(_), Some(_)) => {
            return Err(missing("landscape", "set either `landscape` or `model`, not both"))
        }
        (None, None) => return Err(missing("landscape", "one of `landscape` or `model` is required")),
    };

    let online = OnlineSection {
        tasks: ini.int("online", "tasks", 1)?.unwrap_or(10) as usize,
        delta: ini
            .float_in("online", "delta", Range::Closed(0.0, 1.0))?
            .unwrap_or(1.0),
        epochs_per_task: ini
            .int("online", "epochs_per_task", 1)?
            .map_or(DEFAULT_EPOCHS_PER_TASK, |v| v as usize),
    };

    let switch_step = ini.int("warmup", "switch_step", 0)?;
    if let Some(sw) = switch_step {
        if sw > steps {
            return Err(ConfigError::OutOfRange {
                line: ini.line_of("warmup", "switch_step"),
                key: "switch_step".into(),
                value: sw.to_string(),
                range: format!("[0,{steps}]"),
            });
        }
    }

    let barrier = BarrierSection {
        n_alpha: ini
            .int("barrier", "n_alpha", 2)?
            .map_or(DEFAULT_N_ALPHA, |v| v as usize),
        spawn_step: ini.int("barrier", "spawn_step", 0)?.unwrap_or(0),
        train_steps: ini.int("barrier", "train_steps", 0)?.unwrap_or(steps),
        seed_a: ini.int("barrier", "seed_a", 0)?,
        seed_b: ini.int("barrier", "seed_b", 0)?,
    };

    let grid = parse_grid(&ini)?;

    let gradcheck = GradcheckSection {
        points: ini.int("gradcheck", "points", 1)?.unwrap_or(10) as usize,
        step: ini
            .float_in("gradcheck", "step", Range::Above(0.0))?
            .unwrap_or(DEFAULT_STEP),
        tolerance: ini
            .float_in("gradcheck", "tolerance", Range::Above(0.0))?
            .unwrap_or(DEFAULT_TOLERANCE),
    };

    let output_dir = ini.get("output", "dir").map(|e| PathBuf::from(&e.value));

    Ok(ExperimentFile {
        optimizer_name,
        optimizer,
        hp,
        s_hat0,
        problem,
        steps,
        seed,
        seeds,
        batch_size,
        telemetry_every,
        online,
        switch_step,
        barrier,
        grid,
        gradcheck,
        output_dir,
    })
}

fn missing(key: &str, message: &str) -> ConfigError {
    ConfigError::Missing {
        key: key.into(),
        message: message.into(),
    }
}

fn parse_hyperparams(ini: &Ini, implied_decay: f64) -> Result<HyperParams> {
    let d = HyperParams::default();
    let s = "hyperparameters";
    let damping = match ini.get(s, "damping") {
        None => Damping::Torque,
        Some(e) if e.value == "torque" => Damping::Torque,
        Some(e) => {
            let v = parse_float("damping", &e.value, e.line).map_err(|_| ConfigError::InvalidValue {
                line: e.line,
                key: "damping".into(),
                value: e.value.clone(),
                expected: "`torque` or a number".into(),
            })?;
            Range::Closed(0.0, 1.0).check("damping", v, e.line)?;
            Damping::Fixed(v)
        }
    };
    Ok(HyperParams {
        eta: ini.float_in(s, "eta", Range::AtLeast(0.0))?.unwrap_or(d.eta),
        beta: ini.float_in(s, "beta", Range::HalfOpen(0.0, 1.0))?.unwrap_or(d.beta),
        gamma: ini.float_in(s, "gamma", Range::Closed(0.0, 1.0))?.unwrap_or(d.gamma),
        epsilon: ini.float_in(s, "epsilon", Range::AtLeast(0.0))?.unwrap_or(d.epsilon),
        beta2: ini.float_in(s, "beta2", Range::HalfOpen(0.0, 1.0))?.unwrap_or(d.beta2),
        c: ini.float_in(s, "c", Range::Above(0.0))?.unwrap_or(d.c),
        weight_decay: ini
            .float_in(s, "weight_decay", Range::AtLeast(0.0))?
            .unwrap_or(implied_decay),
        damping,
    })
}

fn parse_base_landscape(ini: &Ini, name: &str) -> Result<LandscapeSpec> {
    let s = "landscape";
    match name {
        "rosenbrock" => {
            let dim = ini.int(s, "dim", 2)?.unwrap_or(2) as usize;
            Ok(LandscapeSpec::Rosenbrock { dim })
        }
        _ => {
            let curvature = match ini.float_list(s, "curvature")? {
                Some(c) => {
                    if let Some(bad) = c.iter().find(|&&v| v <= 0.0) {
                        return Err(ConfigError::OutOfRange {
                            line: ini.line_of(s, "curvature"),
                            key: "curvature".into(),
                            value: bad.to_string(),
                            range: Range::Above(0.0).to_string(),
                        });
                    }
                    if ini.has(s, "dim") && ini.int(s, "dim", 1)? != Some(c.len() as u64) {
                        return Err(ConfigError::InvalidValue {
                            line: ini.line_of(s, "dim"),
                            key: "dim".into(),
                            value: ini.get(s, "dim").map(|e| e.value.clone()).unwrap_or_default(),
                            expected: format!("equal to the length of `curvature` ({})", c.len()),
                        });
                    }
                    c
                }
                None => {
                    let dim = ini.int(s, "dim", 1)?.unwrap_or(10) as usize;
                    let lo = ini
                        .float_in(s, "curvature_min", Range::Above(0.0))?
                        .unwrap_or(1.0);
                    let hi = ini
                        .float_in(s, "curvature_max", Range::Above(0.0))?
                        .unwrap_or(10.0);
                    if hi < lo {
                        return Err(ConfigError::OutOfRange {
                            line: ini.line_of(s, "curvature_max"),
                            key: "curvature_max".into(),
                            value: hi.to_string(),
                            range: Range::AtLeast(lo).to_string(),
                        });
                    }
                    Quadratic::log_spaced(dim, lo, hi, 0.0)
                        .expect("validated curvature range")
                        .curvature()
                        .as_slice()
                        .to_vec()
                }
            };
            let center = vector_or_fill(ini, s, "center", curvature.len(), 0.0)?;
            Ok(LandscapeSpec::Quadratic { curvature, center })
        }
    }
}

fn vector_or_fill(ini: &Ini, section: &str, key: &str, dim: usize, default: f64) -> Result<Vec<f64>> {
    match ini.float_list(section, key)? {
        None => Ok(vec![default; dim]),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; dim]),
        Some(v) if v.len() == dim => Ok(v),
        Some(v) => Err(ConfigError::InvalidValue {
            line: ini.line_of(section, key),
            key: key.into(),
            value: format!("{} values", v.len()),
            expected: format!("one value or {dim} values"),
        }),
    }
}

fn parse_landscape(ini: &Ini, name: &str) -> Result<Problem> {
    let s = "landscape";
    let spec = match name {
        "quadratic" | "rosenbrock" => parse_base_landscape(ini, name)?,
        _ => {
            let base = ini
                .name(s, "base", BASE_NAMES)?
                .map_or("quadratic".to_string(), |(b, _)| b);
            let base = parse_base_landscape(ini, &base)?;
            let sigma = ini.float_in(s, "sigma", Range::AtLeast(0.0))?;
            if name == "noisy" {
                LandscapeSpec::Noisy {
                    base: Box::new(base),
                    sigma: sigma.unwrap_or(0.1),
                }
            } else {
                let inner = match sigma {
                    Some(sigma) if sigma > 0.0 => LandscapeSpec::Noisy {
                        base: Box::new(base),
                        sigma,
                    },
                    _ => base,
                };
                LandscapeSpec::Adversary {
                    base: Box::new(inner),
                    kappa: ini.float_in(s, "kappa", Range::AtLeast(0.0))?.unwrap_or(3.0),
                    period: ini.int(s, "period", 1)?.unwrap_or(5),
                }
            }
        }
    };
    let theta0 = vector_or_fill(ini, s, "theta0", spec.dim(), 1.0)?;
    Ok(Problem::Landscape {
        spec,
        theta0: ParamVector::new(theta0).expect("finite, non-empty"),
    })
}

fn parse_mlp(ini: &Ini, seed: u64, batch_size: usize, base_dir: &Path) -> Result<Problem> {
    let d = "data";
    let classes = ini.int(d, "classes", 2)?;
    let data = if let Some(e) = ini.get(d, "csv") {
        let classes = classes.ok_or_else(|| missing("classes", "required with `csv`"))? as usize;
        let path = base_dir.join(&e.value);
        let file = fs::File::open(&path).map_err(|err| ConfigError::MissingFile {
            path: path.clone(),
            reason: err.to_string(),
        })?;
        Dataset::read_csv(BufReader::new(file), classes).map_err(|err| ConfigError::InvalidValue {
            line: e.line,
            key: "csv".into(),
            value: e.value.clone(),
            expected: format!("a readable dataset ({err})"),
        })?
    } else {
        let classes = classes.unwrap_or(4) as usize;
        let dim = ini.int(d, "dim", 1)?.unwrap_or(8) as usize;
        let per_class = ini.int(d, "per_class", 1)?.unwrap_or(64) as usize;
        let spread = ini.float_in(d, "spread", Range::AtLeast(0.0))?.unwrap_or(0.5);
        let data_seed = ini.int(d, "seed", 0)?.unwrap_or(split_seed(seed, 3));
        make_gaussian_mixture(classes, dim, per_class, spread, &mut RngStream::new(data_seed))
            .map_err(|err| missing("data", &err.to_string()))?
    };
    let layers = ini
        .usize_list("model", "layers")?
        .unwrap_or_else(|| vec![data.dim(), 32, data.n_classes()]);
    let line = ini.line_of("model", "layers");
    let spec = MlpSpec::new(layers.clone()).map_err(|err| ConfigError::InvalidValue {
        line,
        key: "layers".into(),
        value: format!("{layers:?}"),
        expected: format!("a valid layer list ({err})"),
    })?;
    if spec.input_dim() != data.dim() || spec.n_classes() != data.n_classes() {
        return Err(ConfigError::InvalidValue {
            line,
            key: "layers".into(),
            value: format!("{layers:?}"),
            expected: format!(
                "a net with {} inputs and {} outputs to match the data",
                data.dim(),
                data.n_classes()
            ),
        });
    }
    if batch_size > data.len() {
        return Err(ConfigError::OutOfRange {
            line: ini.line_of("run", "batch_size"),
            key: "batch_size".into(),
            value: batch_size.to_string(),
            range: format!("[1,{}]", data.len()),
        });
    }
    let init_seed = ini.int("model", "init_seed", 0)?.unwrap_or(seed);
    Ok(Problem::Mlp {
        spec,
        data,
        init_seed,
    })
}

fn parse_grid(ini: &Ini) -> Result<Option<GridSection>> {
    let s = "grid";
    let param = ini.name(s, "param", GridParam::NAMES)?;
    let values = ini.float_list(s, "values")?;
    let (param, values) = match (param, values) {
        (None, None) => {
            if ini.has(s, "metric") || ini.has(s, "goal") {
                return Err(missing("values", "a [grid] section needs `param` and `values`"));
            }
            return Ok(None);
        }
        (Some((p, _)), Some(v)) => (GridParam::from_name(&p), v),
        (None, Some(_)) => return Err(missing("param", "required with `values`")),
        (Some(_), None) => return Err(missing("values", "required with `param`")),
    };
    let metric = ini
        .name(s, "metric", Metric::NAMES)?
        .map_or(Metric::FinalLoss, |(m, _)| Metric::from_name(&m));
    let goal = match ini.name(s, "goal", &["minimize", "maximize"])? {
        None => metric.default_goal(),
        Some((g, _)) if g == "minimize" => Goal::Minimize,
        Some(_) => Goal::Maximize,
    };
    Ok(Some(GridSection {
        param,
        values,
        metric,
        goal,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentFile> {
        parse_config_str(text, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("optimizer = tam\nlandscape = quadratic\nsteps = 100\nseed = 1\n").unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Tam);
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.seeds, 1);
        let hp = cfg.hp;
        assert_eq!(
            (hp.gamma, hp.epsilon, hp.beta, hp.beta2, hp.c),
            (0.9, 1e-8, 0.9, 0.999, 1e-8)
        );
        assert_eq!(hp.weight_decay, 0.0);
        assert_eq!(hp.damping, Damping::Torque);
    }

    #[test]
    fn optimizer_typo_is_unknown_key() {
        let err = parse("optimizer = tamm\nlandscape = quadratic\n").unwrap_err();
        assert_eq!(err.kind(), "unknown_key");
        assert_eq!(err.key(), Some("tamm"));
        assert_eq!(err.line(), Some(1));
        assert!(err.to_string().contains("tamm"));
    }

    #[test]
    fn gamma_out_of_range_cites_interval() {
        let text = "optimizer = tam\nlandscape = quadratic\n\n[hyperparameters]\ngamma = 1.5\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.kind(), "out_of_range");
        assert_eq!(err.line(), Some(5));
        assert!(err.to_string().contains("[0,1]"), "{err}");
    }

    #[test]
    fn error_classes_are_distinct() {
        let err = parse("optimizer tam\n").unwrap_err();
        assert_eq!((err.kind(), err.line()), ("syntax", Some(1)));
        let err = parse("[run\n").unwrap_err();
        assert_eq!(err.kind(), "syntax");
        let err = parse("optimizer = tam\nlandscape = quadratic\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!((err.kind(), err.key()), ("unknown_key", Some("learning_rate")));
        let err = parse("[nonsense]\n").unwrap_err();
        assert_eq!(err.kind(), "unknown_key");
        let err = parse("optimizer = tam\nlandscape = quadratic\nsteps = many\n").unwrap_err();
        assert_eq!((err.kind(), err.line()), ("invalid_value", Some(3)));
        let err = parse("optimizer = tam\nlandscape = quadratic\nsteps = 0\n").unwrap_err();
        assert_eq!(err.kind(), "out_of_range");
        let err = parse("landscape = quadratic\n").unwrap_err();
        assert_eq!(err.kind(), "missing_key");
        let err = parse("optimizer = tam\noptimizer = sgdm\n").unwrap_err();
        assert_eq!((err.kind(), err.line()), ("syntax", Some(2)));
        let err = parse_config(Path::new("/definitely/not/here.ini")).unwrap_err();
        assert_eq!(err.kind(), "missing_file");
    }

    #[test]
    fn comments_and_sections() {
        let text = "\
# leading comment
optimizer = sgdm   # trailing comment
landscape = alternating_adversary

[landscape]
dim = 4
kappa = 2.5
period = 3
sigma = 0.1

[hyperparameters]
eta = 0.05
damping = 1
";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.hp.eta, 0.05);
        assert_eq!(cfg.hp.damping, Damping::Fixed(1.0));
        let Problem::Landscape { spec, theta0 } = &cfg.problem else {
            panic!("landscape expected")
        };
        assert_eq!(theta0.len(), 4);
        match spec {
            LandscapeSpec::Adversary {
                kappa,
                period,
                base,
            } => {
                assert_eq!((*kappa, *period), (2.5, 3));
                assert!(matches!(**base, LandscapeSpec::Noisy { sigma, .. } if sigma == 0.1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoupled_aliases() {
        let cfg = parse("optimizer = adamw\nlandscape = rosenbrock\n").unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.hp.weight_decay, DEFAULT_DECOUPLED_DECAY);
        let cfg = parse("optimizer = adatamw\nlandscape = rosenbrock\n[hyperparameters]\nweight_decay = 0.5\n")
            .unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::AdaTam);
        assert_eq!(cfg.hp.weight_decay, 0.5);
    }

    #[test]
    fn mlp_problem_and_grid() {
        let text = "\
optimizer = tam
model = mlp
batch_size = 16

[model]
layers = 6, 12, 3

[data]
classes = 3
dim = 6
per_class = 10

[grid]
param = gamma
values = 0, 0.5, 0.9
metric = final_accuracy
";
        let cfg = parse(text).unwrap();
        assert!(cfg.is_mlp());
        let grid = cfg.grid.unwrap();
        assert_eq!(grid.param, GridParam::Gamma);
        assert_eq!(grid.values, vec![0.0, 0.5, 0.9]);
        assert_eq!(grid.goal, Goal::Maximize);

        let err = parse("optimizer = tam\nmodel = mlp\n[model]\nlayers = 5, 3\n").unwrap_err();
        assert_eq!(err.kind(), "invalid_value");
        let err = parse("optimizer = tam\nmodel = mlp\nbatch_size = 100000\n").unwrap_err();
        assert_eq!(err.kind(), "out_of_range");
    }

    #[test]
    fn switch_step_beyond_budget() {
        let err = parse("optimizer = tam\nlandscape = quadratic\nsteps = 10\n[warmup]\nswitch_step = 11\n")
            .unwrap_err();
        assert_eq!((err.kind(), err.line()), ("out_of_range", Some(5)));
    }
}
