//! Stage-start weight dumps and the magnitude histogram built from them.
//!
//! A dump holds every weight of the network as it stood when the stage's
//! winning mask was chosen, and whether that mask retained it:
//!
//! ```text
//! # schema=1
//! layer,index,weight,retained
//! 0,0,-0.4172,1
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use randprune::driver::{CandidateMask, RunObserver};
use randprune::nn::{MaskedNetwork, ModelSnapshot, OptimizerState};
use serde::{Deserialize, Serialize};

pub const SCHEMA_LINE: &str = "# schema=1";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("missing `{SCHEMA_LINE}` header")]
    Schema,
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
    #[error("layer {layer} is missing index {index}")]
    Gap { layer: usize, index: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Row {
    layer: usize,
    index: usize,
    weight: f64,
    retained: u8,
}

/// Weights and retained flags of every layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightDump {
    pub layers: Vec<LayerDump>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerDump {
    pub weights: Vec<f64>,
    pub retained: Vec<bool>,
}

impl LayerDump {
    pub fn kept(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }
}

pub fn dump_path(run_dir: &Path, seed: u64, stage: usize) -> PathBuf {
    run_dir
        .join("weights")
        .join(format!("seed{seed}_stage{stage}.csv"))
}

pub fn write_dump<W: Write>(mut out: W, dump: &WeightDump) -> Result<(), DumpError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    for (layer, l) in dump.layers.iter().enumerate() {
        for (index, (&weight, &kept)) in l.weights.iter().zip(&l.retained).enumerate() {
            w.serialize(Row {
                layer,
                index,
                weight,
                retained: u8::from(kept),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a dump. Rows may come in any order but every layer must be a
/// contiguous run of indices starting at 0.
pub fn read_dump<R: Read>(reader: R) -> Result<WeightDump, DumpError> {
    let mut reader = BufReader::new(reader);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(DumpError::Schema);
    }
    let mut rows: Vec<Row> = Vec::new();
    for (i, rec) in csv::Reader::from_reader(reader).deserialize().enumerate() {
        let row: Row = rec.map_err(|e| DumpError::Record {
            record: i + 1,
            message: e.to_string(),
        })?;
        if !row.weight.is_finite() || row.retained > 1 {
            return Err(DumpError::Record {
                record: i + 1,
                message: "weight must be finite and retained 0 or 1".into(),
            });
        }
        rows.push(row);
    }
    rows.sort_by_key(|r| (r.layer, r.index));
    let mut dump = WeightDump::default();
    for r in rows {
        if r.layer > dump.layers.len() {
            return Err(DumpError::Gap {
                layer: dump.layers.len(),
                index: 0,
            });
        }
        if r.layer == dump.layers.len() {
            dump.layers.push(LayerDump::default());
        }
        let l = &mut dump.layers[r.layer];
        if r.index != l.weights.len() {
            return Err(DumpError::Gap {
                layer: r.layer,
                index: l.weights.len(),
            });
        }
        l.weights.push(r.weight);
        l.retained.push(r.retained == 1);
    }
    Ok(dump)
}

/// Writes a dump at every stage's winner selection. I/O errors are kept
/// and surfaced after the run, since the observer cannot abort it.
pub struct DumpObserver {
    run_dir: PathBuf,
    seed: u64,
    pub error: Option<DumpError>,
}

impl DumpObserver {
    pub fn new(run_dir: &Path, seed: u64) -> Self {
        Self {
            run_dir: run_dir.to_path_buf(),
            seed,
            error: None,
        }
    }

    fn write(
        &self,
        stage: usize,
        net: &MaskedNetwork,
        winner: &CandidateMask,
    ) -> Result<(), DumpError> {
        let path = dump_path(&self.run_dir, self.seed, stage);
        std::fs::create_dir_all(path.parent().expect("dump path has a parent"))?;
        let dump = WeightDump {
            layers: net
                .network()
                .layers()
                .iter()
                .zip(&winner.masks)
                .map(|(l, m)| LayerDump {
                    weights: l.weights.clone(),
                    retained: m.bits().to_vec(),
                })
                .collect(),
        };
        let mut file = std::io::BufWriter::new(File::create(path)?);
        write_dump(&mut file, &dump)?;
        file.flush()?;
        Ok(())
    }
}

impl RunObserver for DumpObserver {
    fn winner_selected(
        &mut self,
        stage: usize,
        winner: &CandidateMask,
        _stage_start: &ModelSnapshot,
        net: &MaskedNetwork,
        _opt: &OptimizerState,
    ) {
        if self.error.is_none() {
            if let Err(e) = self.write(stage, net, winner) {
                self.error = Some(e);
            }
        }
    }
}

/// One histogram bucket of a layer's magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistRow {
    pub layer: usize,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub tau: f64,
    pub near_boundary_fraction: f64,
}

/// The k-th largest magnitude, 0 when `k` is 0.
pub fn kth_largest_magnitude(weights: &[f64], k: usize) -> f64 {
    if k == 0 || weights.is_empty() {
        return 0.0;
    }
    let mut mags: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags[k.min(mags.len()) - 1]
}

/// `bins` equal-width buckets over `[0, max |w|]` per layer. The boundary
/// `tau` is the k-th largest magnitude, with k the number of weights the
/// stage's mask retained.
pub fn histogram(dump: &WeightDump, bins: usize) -> Vec<HistRow> {
    assert!(bins >= 1, "bins must be >= 1");
    let mut rows = Vec::new();
    for (layer, l) in dump.layers.iter().enumerate() {
        let tau = kth_largest_magnitude(&l.weights, l.kept());
        let near = l
            .weights
            .iter()
            .filter(|w| {
                let m = w.abs();
                m >= 2.0 / 3.0 * tau && m <= 4.0 / 3.0 * tau
            })
            .count();
        let near_boundary_fraction = if l.weights.is_empty() {
            0.0
        } else {
            near as f64 / l.weights.len() as f64
        };
        let max = l.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let mut counts = vec![0usize; bins];
        for w in &l.weights {
            let b = if max > 0.0 {
                ((w.abs() / max) * bins as f64) as usize
            } else {
                0
            };
            counts[b.min(bins - 1)] += 1;
        }
        for (bin, count) in counts.into_iter().enumerate() {
            rows.push(HistRow {
                layer,
                bin,
                lo: max * bin as f64 / bins as f64,
                hi: max * (bin + 1) as f64 / bins as f64,
                count,
                tau,
                near_boundary_fraction,
            });
        }
    }
    rows
}

pub fn write_histogram<W: Write>(mut out: W, rows: &[HistRow]) -> Result<(), DumpError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
