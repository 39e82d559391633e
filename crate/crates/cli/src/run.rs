//! The `run` command: one pruning run per seed, written to `stages.csv`,
//! `candidates.csv` and `summary.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use randprune::data::{generate_synthetic, load_csv, prepare, Dataset};
use randprune::driver::{
    imp_run_observed, run_deterministic_imp_observed, ImpOutcome, NoopObserver, RunFailure,
    RunObserver, StageReport,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Diagnostic, ExperimentConfig, Method, Origin};
use crate::hist::{DumpObserver, SCHEMA_LINE};
use crate::CliError;

pub const SUMMARY_SCHEMA: u32 = 1;

/// Final metrics of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub dense_accuracy: f64,
    pub dense_loss: f64,
    pub dense_epochs: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// Fraction of all weights that are exactly zero at the end.
    pub final_sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub dense_accuracy: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary<'a> {
    pub schema: u32,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: &'a ExperimentConfig,
    pub seeds: Vec<SeedSummary>,
    pub mean: Option<Means>,
}

fn means(seeds: &[SeedSummary]) -> Option<Means> {
    if seeds.is_empty() {
        return None;
    }
    let n = seeds.len() as f64;
    let avg = |f: fn(&SeedSummary) -> f64| seeds.iter().map(f).sum::<f64>() / n;
    Some(Means {
        dense_accuracy: avg(|s| s.dense_accuracy),
        final_accuracy: avg(|s| s.final_accuracy),
        final_loss: avg(|s| s.final_loss),
    })
}

/// The two per-run CSV writers, each led by the schema line.
struct Tables {
    stages: csv::Writer<BufWriter<File>>,
    candidates: csv::Writer<BufWriter<File>>,
}

fn table(path: &Path, header: &[&str]) -> std::io::Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

fn real(v: f64) -> String {
    v.to_string()
}

impl Tables {
    fn create(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            stages: table(
                &dir.join("stages.csv"),
                &[
                    "seed",
                    "stage",
                    "sparsity",
                    "winner_origin",
                    "winner_ir_mean",
                    "val_acc",
                    "val_loss",
                    "epochs",
                    "wall_ms",
                ],
            )?,
            candidates: table(
                &dir.join("candidates.csv"),
                &[
                    "seed",
                    "stage",
                    "candidate_id",
                    "origin",
                    "ir_mean",
                    "emep_score",
                ],
            )?,
        })
    }

    fn append(&mut self, seed: u64, reports: &[StageReport]) -> std::io::Result<()> {
        for r in reports {
            let w = r.winner();
            self.stages.write_record([
                seed.to_string(),
                r.stage.to_string(),
                real(r.sparsity),
                w.origin.to_string(),
                real(w.ir_mean),
                real(r.val.accuracy),
                real(r.val.loss),
                r.finetune_epochs.to_string(),
                r.wall_ms.to_string(),
            ])?;
            for c in &r.candidates {
                self.candidates.write_record([
                    seed.to_string(),
                    r.stage.to_string(),
                    c.id.to_string(),
                    c.origin.to_string(),
                    real(c.ir_mean),
                    c.emep.map(|e| real(e.accuracy)).unwrap_or_default(),
                ])?;
            }
        }
        self.stages.flush()?;
        self.candidates.flush()
    }
}

fn seed_summary(seed: u64, out: &ImpOutcome) -> SeedSummary {
    let fin = out.final_eval();
    let zeros: usize = out.network.zero_counts().iter().sum();
    let total: usize = out.network.network().weight_counts().iter().sum();
    SeedSummary {
        seed,
        dense_accuracy: out.dense.accuracy,
        dense_loss: out.dense.loss,
        dense_epochs: out.dense_epochs,
        final_accuracy: fin.accuracy,
        final_loss: fin.loss,
        final_sparsity: zeros as f64 / total as f64,
    }
}

fn config_error(key: &str, message: String) -> CliError {
    CliError::Config(ConfigError::Invalid(vec![Diagnostic {
        origin: Origin::Validation,
        key: key.into(),
        message,
    }]))
}

/// Load a CSV dataset once and check it against the network shape.
fn load_source(cfg: &ExperimentConfig) -> Result<Option<Dataset>, CliError> {
    if cfg.dataset.synthetic_kind().is_some() {
        return Ok(None);
    }
    let path = cfg
        .dataset
        .path
        .as_ref()
        .expect("validate requires a path for csv data");
    let data = load_csv(path, &cfg.dataset.label())
        .map_err(|e| config_error("dataset.path", e.to_string()))?;
    let w = &cfg.network.widths;
    if w[0] != data.features() || w[w.len() - 1] != data.class_count() {
        return Err(config_error(
            "network.widths",
            format!(
                "dataset has {} features and {} classes, widths are {w:?}",
                data.features(),
                data.class_count()
            ),
        ));
    }
    Ok(Some(data))
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text).map_err(|e| CliError::io("summary.json", e))
}

/// Execute every seed in order. Completed stages are flushed to the CSVs
/// as each seed finishes, so a failure leaves everything up to it on disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let source = load_source(cfg)?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
    let mut tables = Tables::create(dir).map_err(|e| CliError::io("output tables", e))?;

    let mut seeds = Vec::new();
    for &seed in &cfg.run.seeds {
        log::info!("seed {seed}: starting");
        let data = match (&source, cfg.dataset.synthetic_kind()) {
            (Some(d), _) => d.clone(),
            (None, Some(kind)) => generate_synthetic(kind, cfg.dataset.n, cfg.dataset.noise, seed)
                .map_err(|e| config_error("dataset", e.to_string()))?,
            (None, None) => unreachable!("validate requires a path for csv data"),
        };
        let split = prepare(&data, cfg.dataset.val_fraction, seed)
            .map_err(|e| config_error("dataset", e.to_string()))?;
        let run_cfg = cfg.prune_run_config(seed);

        let mut dumper = cfg
            .output
            .dump_weights
            .then(|| DumpObserver::new(dir, seed));
        let observer: &mut dyn RunObserver = match dumper.as_mut() {
            Some(d) => d,
            None => &mut NoopObserver,
        };
        let result = match cfg.prune.method {
            Method::Randomized => imp_run_observed(&run_cfg, &split.train, &split.val, observer),
            Method::Deterministic => {
                run_deterministic_imp_observed(&run_cfg, &split.train, &split.val, observer)
            }
        };
        let dump_error = dumper.and_then(|d| d.error);
        match result {
            Ok(out) => {
                tables
                    .append(seed, &out.reports)
                    .map_err(|e| CliError::io("output tables", e))?;
                let s = seed_summary(seed, &out);
                log::info!("seed {seed}: final accuracy {:.4}", s.final_accuracy);
                seeds.push(s);
            }
            Err(RunFailure { error, partial }) => {
                tables
                    .append(seed, &partial)
                    .map_err(|e| CliError::io("output tables", e))?;
                let message = format!("seed {seed}: {error}");
                write_summary(
                    dir,
                    &Summary {
                        schema: SUMMARY_SCHEMA,
                        status: "failed",
                        error: Some(message.clone()),
                        config: cfg,
                        seeds,
                        mean: None,
                    },
                )?;
                return Err(CliError::Runtime(message));
            }
        }
        if let Some(e) = dump_error {
            return Err(CliError::Runtime(format!(
                "seed {seed}: weight dump failed: {e}"
            )));
        }
    }
    let mean = means(&seeds);
    write_summary(
        dir,
        &Summary {
            schema: SUMMARY_SCHEMA,
            status: "ok",
            error: None,
            config: cfg,
            seeds,
            mean,
        },
    )
}
