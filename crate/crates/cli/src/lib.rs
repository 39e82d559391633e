//! Experiment runner for randomized iterative magnitude pruning.
//!
//! `run` executes a configured experiment for each seed, `compare` lines
//! up two runs' final accuracies and `hist` summarizes dumped stage-start
//! weight magnitudes around the pruning boundary.

pub mod compare;
pub mod config;
pub mod hist;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn io(what: &str, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{what}: {e}"))
    }
}

/// Options of `run` that sit above the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    /// `key=value` assignments, applied in order.
    pub set: Vec<String>,
    /// Replaces `run.seeds` when non-empty.
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub dump_weights: bool,
}

/// Rewrite `--dotted.key value` and `--dotted.key=value` into
/// `--set dotted.key=value`, for any key in [`config::KEYS`]. Other
/// arguments pass through untouched.
pub fn expand_key_flags<I: IntoIterator<Item = String>>(args: I) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            out.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !config::KEYS.iter().any(|(k, _)| *k == key) {
            out.push(arg);
            continue;
        }
        let Some(value) = inline.or_else(|| it.next()) else {
            // leave it for the parser to reject
            out.push(arg);
            continue;
        };
        out.push("--set".into());
        out.push(format!("{key}={value}"));
    }
    out
}

/// Load, override and validate a configuration.
pub fn resolve_config(path: &Path, o: &RunOverrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_overrides(&o.set)?;
    if !o.seeds.is_empty() {
        cfg.run.seeds = o.seeds.clone();
    }
    if let Some(out) = &o.out {
        cfg.output.dir = out.clone();
    }
    if let Some(p) = o.parallel {
        cfg.run.parallel = p;
    }
    if o.dump_weights {
        cfg.output.dump_weights = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_run(config: &Path, overrides: &RunOverrides) -> Result<(), CliError> {
    let cfg = resolve_config(config, overrides)?;
    run::execute(&cfg)
}

pub fn cmd_compare(a: &Path, b: &Path) -> Result<String, CliError> {
    compare::execute(a, b).map_err(|e| CliError::Usage(e.to_string()))
}

/// Histogram of one stage's dump. Without `seed`, the lowest seed that
/// has a dump for `stage` is used.
pub fn cmd_hist(
    run_dir: &Path,
    stage: usize,
    bins: usize,
    seed: Option<u64>,
) -> Result<String, CliError> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let seed = match seed {
        Some(s) => s,
        None => dumped_seeds(run_dir, stage)
            .into_iter()
            .min()
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "stage {stage} was not dumped in {}",
                    run_dir.display()
                ))
            })?,
    };
    let path = hist::dump_path(run_dir, seed, stage);
    let file = std::fs::File::open(&path).map_err(|_| {
        CliError::Usage(format!(
            "stage {stage} of seed {seed} was not dumped ({})",
            path.display()
        ))
    })?;
    let dump =
        hist::read_dump(file).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    hist::write_histogram(&mut out, &hist::histogram(&dump, bins))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}


fn dumped_seeds(run_dir: &Path, stage: usize) -> Vec<u64> {
    let suffix = format!("_stage{stage}.csv");
    let Ok(entries) = std::fs::read_dir(run_dir.join("weights")) else {
        return Vec::new();
    };
    entries
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|name| {
            name.strip_prefix("seed")?
                .strip_suffix(&suffix)?
                .parse()
                .ok()
        })
        .collect()
}
