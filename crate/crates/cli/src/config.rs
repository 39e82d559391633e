//! Experiment configuration: a flat `key = value` file with dotted keys.
//!
//! ```text
//! # comments run to end of line
//! dataset.kind = moons
//! network.widths = 2, 32, 32, 2
//! prune.schedule = [0.54, 0.83, 0.91, 0.9375]
//! run.seeds = 0, 1, 2
//! ```
//!
//! Lists are comma separated, optionally bracketed. Values may be wrapped in
//! double quotes. Every key has a default; unknown or repeated keys are
//! errors. See [`KEYS`] for the full schema.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use randprune::data::{LabelColumn, SyntheticKind};
use randprune::driver::PruneRunConfig;
use randprune::mask::SamplingConfig;
use randprune::nn::{Activation, KdConfig, OptimizerKind};
use randprune::schedule::{validate_schedule, RandomnessSchedule, SparsitySchedule};
use serde::Serialize;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset.kind", "moons | blobs | spirals | csv"),
    ("dataset.path", "CSV file, required when kind = csv"),
    (
        "dataset.label_column",
        "CSV label column, by header name or 0-based index",
    ),
    ("dataset.n", "synthetic sample count"),
    ("dataset.noise", "synthetic Gaussian noise std"),
    ("dataset.centers", "number of blobs"),
    (
        "dataset.val_fraction",
        "held-out validation fraction, in (0, 1)",
    ),
    ("network.widths", "layer widths, input first, classes last"),
    ("network.activation", "hidden activation: relu | identity"),
    ("train.base_lr", "learning rate"),
    ("train.batch_size", "mini-batch size"),
    ("train.optimizer", "adam | sgd"),
    ("train.dense_epochs_max", "epoch cap for dense training"),
    (
        "train.finetune_epochs_max",
        "epoch cap for per-stage finetuning",
    ),
    (
        "train.patience",
        "epochs without validation-loss improvement before stopping",
    ),
    ("prune.method", "randomized | deterministic"),
    ("prune.schedule", "strictly increasing sparsities in (0, 1)"),
    ("prune.n_candidates", "candidate masks per stage"),
    (
        "prune.emep_lr_multiplier",
        "learning-rate multiplier for candidate scoring, > 1",
    ),
    ("sampling.sr", "sampling ratio"),
    ("sampling.exponent", "magnitude exponent T"),
    ("sampling.support_multiplier", "support width r"),
    ("sampling.schedule", "decrease | increase"),
    ("kd.enabled", "distill from the dense network"),
    ("kd.alpha_hidden", "hidden-state loss weight"),
    ("kd.alpha_output", "logit loss weight"),
    ("output.dir", "run directory"),
    (
        "output.dump_weights",
        "write stage-start weights for `hist`",
    ),
    ("run.seeds", "seeds, one run each"),
    ("run.parallel", "threads for candidate scoring"),
];

/// One problem with a configuration, tied to the key that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub origin: Origin,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag,
    Validation,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.origin {
            Origin::Line(n) => write!(f, "line {n}: {}: {}", self.key, self.message),
            Origin::Flag => write!(f, "--set {}: {}", self.key, self.message),
            Origin::Validation => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{}", render(.0))]
    Invalid(Vec<Diagnostic>),
}

fn render(diags: &[Diagnostic]) -> String {
    let mut out = String::from("invalid configuration");
    for d in diags {
        out.push_str("\n  ");
        out.push_str(&d.to_string());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Moons,
    Blobs,
    Spirals,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Randomized,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub path: Option<PathBuf>,
    pub label_column: String,
    pub n: usize,
    pub noise: f64,
    pub centers: usize,
    pub val_fraction: f64,
}

impl DatasetConfig {
    pub fn synthetic_kind(&self) -> Option<SyntheticKind> {
        match self.kind {
            DatasetKind::Moons => Some(SyntheticKind::Moons),
            DatasetKind::Spirals => Some(SyntheticKind::Spirals),
            DatasetKind::Blobs => Some(SyntheticKind::Blobs {
                centers: self.centers,
            }),
            DatasetKind::Csv => None,
        }
    }

    pub fn label(&self) -> LabelColumn {
        match self.label_column.parse() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(self.label_column.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub dense_epochs_max: usize,
    pub finetune_epochs_max: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneConfig {
    pub method: Method,
    pub schedule: Vec<f64>,
    pub n_candidates: usize,
    pub emep_lr_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    /// Not echoed: the same run written elsewhere has the same summary.
    #[serde(skip)]
    pub dir: PathBuf,
    pub dump_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// Not echoed: results do not depend on it.
    #[serde(skip)]
    pub parallel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub sampling: SamplingConfig,
    pub kd: KdConfig,
    pub output: OutputConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig {
                kind: DatasetKind::Moons,
                path: None,
                label_column: "label".into(),
                n: 2000,
                noise: 0.2,
                centers: 3,
                val_fraction: 0.2,
            },
            network: NetworkConfig {
                widths: vec![2, 32, 32, 2],
                activation: Activation::Relu,
            },
            train: TrainConfig {
                base_lr: 0.01,
                batch_size: 32,
                optimizer: OptimizerKind::Adam,
                dense_epochs_max: 100,
                finetune_epochs_max: 50,
                patience: 5,
            },
            prune: PruneConfig {
                method: Method::Randomized,
                schedule: vec![0.54, 0.83, 0.91, 0.9375],
                n_candidates: 8,
                emep_lr_multiplier: 5.0,
            },
            sampling: SamplingConfig::default(),
            kd: KdConfig::default(),
            output: OutputConfig {
                dir: PathBuf::from("runs/latest"),
                dump_weights: false,
            },
            run: RunConfig {
                seeds: vec![0],
                parallel: 1,
            },
        }
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
}

fn scalar<T: std::str::FromStr>(v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got `{v}`"))
}

fn list<T: std::str::FromStr>(v: &str, what: &str) -> Result<Vec<T>, String> {
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(v)
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|item| scalar(item.trim(), what))
        .collect()
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn choice<T: Copy>(v: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
            format!("expected one of {}, got `{v}`", names.join(" | "))
        })
}

impl ExperimentConfig {
    /// Assign one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = unquote(value.trim());
        const REAL: &str = "a real number";
        const COUNT: &str = "a non-negative integer";
        match key {
            "dataset.kind" => {
                self.dataset.kind = choice(
                    v,
                    &[
                        ("moons", DatasetKind::Moons),
                        ("blobs", DatasetKind::Blobs),
                        ("spirals", DatasetKind::Spirals),
                        ("csv", DatasetKind::Csv),
                    ],
                )?
            }
            "dataset.path" => self.dataset.path = Some(PathBuf::from(v)),
            "dataset.label_column" => self.dataset.label_column = v.to_string(),
            "dataset.n" => self.dataset.n = scalar(v, COUNT)?,
            "dataset.noise" => self.dataset.noise = scalar(v, REAL)?,
            "dataset.centers" => self.dataset.centers = scalar(v, COUNT)?,
            "dataset.val_fraction" => self.dataset.val_fraction = scalar(v, REAL)?,
            "network.widths" => self.network.widths = list(v, "a list of positive integers")?,
            "network.activation" => self.network.activation = v.parse()?,
            "train.base_lr" => self.train.base_lr = scalar(v, REAL)?,
            "train.batch_size" => self.train.batch_size = scalar(v, COUNT)?,
            "train.optimizer" => self.train.optimizer = v.parse()?,
            "train.dense_epochs_max" => self.train.dense_epochs_max = scalar(v, COUNT)?,
            "train.finetune_epochs_max" => self.train.finetune_epochs_max = scalar(v, COUNT)?,
            "train.patience" => self.train.patience = scalar(v, COUNT)?,
            "prune.method" => {
                self.prune.method = choice(
                    v,
                    &[
                        ("randomized", Method::Randomized),
                        ("deterministic", Method::Deterministic),
                    ],
                )?
            }
            "prune.schedule" => self.prune.schedule = list(v, "a list of real numbers")?,
            "prune.n_candidates" => self.prune.n_candidates = scalar(v, COUNT)?,
            "prune.emep_lr_multiplier" => self.prune.emep_lr_multiplier = scalar(v, REAL)?,
            "sampling.sr" => self.sampling.sampling_ratio = scalar(v, REAL)?,
            "sampling.exponent" => self.sampling.exponent = scalar(v, COUNT)?,
            "sampling.support_multiplier" => self.sampling.support_multiplier = scalar(v, REAL)?,
            "sampling.schedule" => self.sampling.schedule = v.parse::<RandomnessSchedule>()?,
            "kd.enabled" => self.kd.enabled = boolean(v)?,
            "kd.alpha_hidden" => self.kd.alpha_hidden = scalar(v, REAL)?,
            "kd.alpha_output" => self.kd.alpha_output = scalar(v, REAL)?,
            "output.dir" => self.output.dir = PathBuf::from(v),
            "output.dump_weights" => self.output.dump_weights = boolean(v)?,
            "run.seeds" => self.run.seeds = list(v, "a list of non-negative integers")?,
            "run.parallel" => self.run.parallel = scalar(v, COUNT)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parse a configuration file body on top of the defaults. Reports every
    /// malformed line, not only the first.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        let mut diags = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = Origin::Line(i + 1);
            let Some((key, value)) = line.split_once('=') else {
                diags.push(Diagnostic {
                    origin,
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
                continue;
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                diags.push(Diagnostic {
                    origin,
                    key: key.into(),
                    message: "repeated key".into(),
                });
                continue;
            }
            if let Err(message) = cfg.set(key, value) {
                diags.push(Diagnostic {
                    origin,
                    key: key.into(),
                    message,
                });
            }
        }
        if diags.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(diags))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        let mut diags = Vec::new();
        for o in overrides {
            let (key, value) = match o.split_once('=') {
                Some((k, v)) => (k.trim(), v),
                None => {
                    diags.push(Diagnostic {
                        origin: Origin::Flag,
                        key: o.clone(),
                        message: "expected `key=value`".into(),
                    });
                    continue;
                }
            };
            if let Err(message) = self.set(key, value) {
                diags.push(Diagnostic {
                    origin: Origin::Flag,
                    key: key.into(),
                    message,
                });
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(diags))
        }
    }

    /// Range and consistency checks across keys.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut diags = Vec::new();
        let mut bad = |key: &str, message: String| {
            diags.push(Diagnostic {
                origin: Origin::Validation,
                key: key.into(),
                message,
            })
        };
        let d = &self.dataset;
        let synthetic_classes = match d.kind {
            DatasetKind::Csv => {
                match &d.path {
                    None => bad("dataset.path", "required when dataset.kind = csv".into()),
                    Some(p) if !p.is_file() => {
                        bad("dataset.path", format!("{} does not exist", p.display()))
                    }
                    Some(_) => {}
                }
                None
            }
            DatasetKind::Blobs => Some(d.centers),
            DatasetKind::Moons | DatasetKind::Spirals => Some(2),
        };
        if d.kind != DatasetKind::Csv && d.n < 4 {
            bad("dataset.n", format!("need at least 4 samples, got {}", d.n));
        }
        if !(d.noise.is_finite() && d.noise >= 0.0) {
            bad("dataset.noise", format!("must be >= 0, got {}", d.noise));
        }
        if d.kind == DatasetKind::Blobs && d.centers < 2 {
            bad(
                "dataset.centers",
                format!("need at least 2, got {}", d.centers),
            );
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            bad(
                "dataset.val_fraction",
                format!("must lie in (0, 1), got {}", d.val_fraction),
            );
        }

        let w = &self.network.widths;
        if w.len() < 2 || w.contains(&0) {
            bad(
                "network.widths",
                format!("need at least 2 positive widths, got {w:?}"),
            );
        } else if let Some(classes) = synthetic_classes {
            if w[0] != 2 {
                bad(
                    "network.widths",
                    format!("synthetic data has 2 features, first width is {}", w[0]),
                );
            }
            if w[w.len() - 1] != classes {
                bad(
                    "network.widths",
                    format!(
                        "dataset has {classes} classes, last width is {}",
                        w[w.len() - 1]
                    ),
                );
            }
        }

        let t = &self.train;
        if !(t.base_lr.is_finite() && t.base_lr > 0.0) {
            bad("train.base_lr", format!("must be > 0, got {}", t.base_lr));
        }
        for (key, v) in [
            ("train.batch_size", t.batch_size),
            ("train.dense_epochs_max", t.dense_epochs_max),
            ("train.finetune_epochs_max", t.finetune_epochs_max),
            ("train.patience", t.patience),
            ("prune.n_candidates", self.prune.n_candidates),
            ("run.parallel", self.run.parallel),
        ] {
            if v == 0 {
                bad(key, "must be >= 1".into());
            }
        }
        if let Err(e) = validate_schedule(&self.prune.schedule) {
            bad("prune.schedule", e.to_string());
        }
        let m = self.prune.emep_lr_multiplier;
        if !(m.is_finite() && m > 1.0) {
            bad("prune.emep_lr_multiplier", format!("must be > 1, got {m}"));
        }
        if let Err(e) = self.sampling.validate() {
            bad("sampling", e.to_string());
        }
        if let Err(e) = self.kd.validate() {
            bad("kd", e.to_string());
        }
        if self.run.seeds.is_empty() {
            bad("run.seeds", "need at least one seed".into());
        }
        let mut unique = self.run.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.run.seeds.len() {
            bad("run.seeds", "seeds must be distinct".into());
        }

        if diags.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(diags))
        }
    }

    /// Driver configuration for one seed. Call after [`validate`](Self::validate).
    pub fn prune_run_config(&self, seed: u64) -> PruneRunConfig {
        let schedule = SparsitySchedule::new(self.prune.schedule.clone())
            .expect("schedule checked by validate");
        let mut cfg = PruneRunConfig::new(self.network.widths.clone(), schedule, seed);
        cfg.hidden_activation = self.network.activation;
        cfg.optimizer = self.train.optimizer;
        cfg.batch_size = self.train.batch_size;
        cfg.n_candidates = self.prune.n_candidates;
        cfg.sampling = self.sampling;
        cfg.emep_lr_multiplier = self.prune.emep_lr_multiplier;
        cfg.base_lr = self.train.base_lr;
        cfg.dense_epochs_max = self.train.dense_epochs_max;
        cfg.finetune_epochs_max = self.train.finetune_epochs_max;
        cfg.convergence_patience = self.train.patience;
        cfg.kd = self.kd;
        cfg.parallelism = self.run.parallel;
        cfg
    }
}
