//! Datasets: synthetic generators, CSV ingestion, stratified splitting and
//! feature standardization.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;
use crate::rng::{purpose, stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("{0} labels do not match {1} input rows")]
    LabelCount(usize, usize),
    #[error("label {label} at row {row} is outside {class_count} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        class_count: usize,
    },
    #[error("non-finite feature at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("CSV is empty")]
    EmptyCsv,
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as {expected}")]
    Parse {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("class {class} has {count} sample(s); stratified split needs at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Labelled samples: `inputs` is `n_samples x n_features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self, DataError> {
        if labels.len() != inputs.rows() {
            return Err(DataError::LabelCount(labels.len(), inputs.rows()));
        }
        if labels.is_empty() {
            return Err(DataError::TooFewSamples { min: 1, got: 0 });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(DataError::LabelOutOfRange {
                    row,
                    label,
                    class_count,
                });
            }
        }
        if let Some(pos) = inputs.data().iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos / inputs.cols(),
                column: pos % inputs.cols(),
            });
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `indices`, in order, keeping the class count.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Two interleaving half circles.
    Moons,
    /// Isotropic Gaussian clusters with centers evenly spaced on a circle of
    /// radius 4; `noise` is the per-axis standard deviation.
    Blobs { centers: usize },
    /// Two interleaved spiral arms.
    Spirals,
}

/// Balanced synthetic 2-D classification data, shuffled. `noise` is the
/// standard deviation of Gaussian jitter added to every coordinate.
pub fn generate_synthetic(
    kind: SyntheticKind,
    n: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n < 2 {
        return Err(DataError::TooFewSamples { min: 2, got: n });
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(DataError::Invalid(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let mut rng = stream(seed, &[purpose::DATA]);
    let classes = match kind {
        SyntheticKind::Blobs { centers } if centers < 2 => {
            return Err(DataError::Invalid("blobs need at least 2 centers".into()));
        }
        SyntheticKind::Blobs { centers } => centers,
        SyntheticKind::Moons | SyntheticKind::Spirals => 2,
    };

    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for class in 0..classes {
        // first `n % classes` classes get one extra sample
        let count = n / classes + usize::from(class < n % classes);
        for j in 0..count {
            let t = (j as f64 + 0.5) / count as f64;
            let p = match kind {
                SyntheticKind::Moons => {
                    let a = PI * t;
                    if class == 0 {
                        [a.cos(), a.sin()]
                    } else {
                        [1.0 - a.cos(), 0.5 - a.sin()]
                    }
                }
                SyntheticKind::Spirals => {
                    let angle = 3.0 * PI * t + PI * class as f64;
                    [t * angle.cos(), t * angle.sin()]
                }
                SyntheticKind::Blobs { centers } => {
                    let a = 2.0 * PI * class as f64 / centers as f64;
                    [4.0 * a.cos(), 4.0 * a.sin()]
                }
            };
            points.push((p, class));
        }
    }
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).map_err(|e| DataError::Invalid(e.to_string()))?;
        for (p, _) in &mut points {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }
    points.shuffle(&mut rng);

    let inputs = Matrix::from_vec(n, 2, points.iter().flat_map(|(p, _)| *p).collect())
        .expect("n rows of 2 features");
    Dataset::new(inputs, points.iter().map(|&(_, c)| c).collect(), classes)
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Name(n) => f.write_str(n),
            LabelColumn::Index(i) => write!(f, "#{i}"),
        }
    }
}

/// Load a headed, comma-separated file. Every non-label column is a real
/// feature; labels are non-negative integers. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset, DataError> {
    read_csv(File::open(path)?, label)
}

pub fn read_csv<R: Read>(reader: R, label: &LabelColumn) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(DataError::EmptyCsv);
    }
    let label_idx = match label {
        LabelColumn::Name(name) => headers.iter().position(|h| h.trim() == name),
        LabelColumn::Index(i) => (*i < headers.len()).then_some(*i),
    }
    .ok_or_else(|| DataError::MissingLabelColumn(label.to_string()))?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let parse_err = |expected| DataError::Parse {
                row: row + 1,
                column: headers.get(col).unwrap_or_default().to_string(),
                value: cell.to_string(),
                expected,
            };
            if col == label_idx {
                labels.push(
                    cell.parse::<usize>()
                        .map_err(|_| parse_err("a class index"))?,
                );
            } else {
                let v = cell
                    .parse::<f64>()
                    .map_err(|_| parse_err("a real number"))?;
                if !v.is_finite() {
                    return Err(parse_err("a finite real number"));
                }
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(DataError::TooFewSamples { min: 1, got: 0 });
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let n_features = headers.len() - 1;
    let inputs = Matrix::from_vec(labels.len(), n_features, features)
        .ok_or_else(|| DataError::Invalid("ragged rows".into()))?;
    Dataset::new(inputs, labels, class_count)
}

/// Disjoint train/validation partition with the source row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Per class, `round(val_fraction * count)` samples (at least one, leaving
/// at least one for training) go to validation. Both parts keep source order.
pub fn stratified_split(data: &Dataset, val_fraction: f64, seed: u64) -> Result<Split, DataError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut rng = stream(seed, &[purpose::SPLIT]);
    let mut by_class = vec![Vec::new(); data.class_count()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut val_indices = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        match members.len() {
            0 => continue,
            1 => return Err(DataError::ClassTooSmall { class, count: 1 }),
            count => {
                let take = ((val_fraction * count as f64).round() as usize).clamp(1, count - 1);
                members.shuffle(&mut rng);
                val_indices.extend_from_slice(&members[..take]);
            }
        }
    }
    val_indices.sort_unstable();
    let mut in_val = vec![false; data.len()];
    for &i in &val_indices {
        in_val[i] = true;
    }
    let train_indices: Vec<usize> = (0..data.len()).filter(|&i| !in_val[i]).collect();
    Ok(Split {
        train: data.subset(&train_indices),
        val: data.subset(&val_indices),
        train_indices,
        val_indices,
    })
}

/// Per-feature affine map to zero mean and unit variance, fitted on one
/// dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant features keep a scale of 1.
    pub fn fit(data: &Dataset) -> Self {
        let (n, d) = (data.len() as f64, data.features());
        let x = data.inputs();
        let mut mean = vec![0.0; d];
        for r in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in 0..data.len() {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut inputs = data.inputs().clone();
        for r in 0..inputs.rows() {
            for ((v, m), s) in inputs.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Dataset {
            inputs,
            labels: data.labels.clone(),
            class_count: data.class_count,
        }
    }
}

/// Split, then standardize both parts with statistics from the train part.
pub fn prepare(data: &Dataset, val_fraction: f64, seed: u64) -> Result<Split, DataError> {
    let split = stratified_split(data, val_fraction, seed)?;
    let scaler = Standardizer::fit(&split.train);
    Ok(Split {
        train: scaler.apply(&split.train),
        val: scaler.apply(&split.val),
        ..split
    })
}

/// Fraction of samples whose nearest class centroid is their own class.
pub fn nearest_centroid_accuracy(data: &Dataset) -> f64 {
    let d = data.features();
    let mut centroids = vec![vec![0.0; d]; data.class_count()];
    let mut counts = vec![0usize; data.class_count()];
    for (r, &y) in data.labels().iter().enumerate() {
        counts[y] += 1;
        for (c, v) in centroids[y].iter_mut().zip(data.inputs().row(r)) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let hits = data
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &y)| {
            let x = data.inputs().row(r);
            let dist = |c: &[f64]| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..centroids.len())
                .filter(|&k| counts[k] > 0)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                == Some(y)
        })
        .count();
    hits as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_dataset(text: &str, label: &str) -> Result<Dataset, DataError> {
        read_csv(text.as_bytes(), &LabelColumn::Name(label.into()))
    }

    #[test]
    fn generators_are_deterministic_and_balanced() {
        let a = generate_synthetic(SyntheticKind::Moons, 1000, 0.2, 42).unwrap();
        let b = generate_synthetic(SyntheticKind::Moons, 1000, 0.2, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels().iter().filter(|&&y| y == 0).count(), 500);
        let c = generate_synthetic(SyntheticKind::Blobs { centers: 3 }, 10, 0.1, 1).unwrap();
        assert_eq!(c.class_count(), 3);
        assert!(generate_synthetic(SyntheticKind::Spirals, 1, 0.0, 0).is_err());
    }

    #[test]
    fn noiseless_blobs_are_linearly_separable() {
        let data = generate_synthetic(SyntheticKind::Blobs { centers: 2 }, 200, 0.0, 5).unwrap();
        // linear classifier: sign of the first coordinate (centers at x = +-4)
        let correct = (0..data.len())
            .filter(|&r| usize::from(data.inputs().get(r, 0) < 0.0) == data.labels()[r])
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn spiral_noise_hurts_nearest_centroid() {
        let clean = generate_synthetic(SyntheticKind::Spirals, 1000, 0.0, 3).unwrap();
        let noisy = generate_synthetic(SyntheticKind::Spirals, 1000, 0.5, 3).unwrap();
        assert!(nearest_centroid_accuracy(&clean) > nearest_centroid_accuracy(&noisy));
    }

    #[test]
    fn csv_basic() {
        let d = csv_dataset("x1,x2,y\n0.5,1,0\n-2,3.25,1\n1e-3,0,1\n", "y").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.class_count(), 2);
        assert_eq!(d.labels(), &[0, 1, 1]);
        assert_eq!(d.inputs().row(1), &[-2.0, 3.25]);
        let by_index = read_csv("y,x\n1,2.0\n".as_bytes(), &LabelColumn::Index(0)).unwrap();
        assert_eq!(by_index.inputs().row(0), &[2.0]);
    }

    #[test]
    fn csv_errors_name_the_cell() {
        let err = csv_dataset("x1,x2,y\n0.5,1,0\n0.1,abc,1\n", "y").unwrap_err();
        match err {
            DataError::Parse {
                row, column, value, ..
            } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "x2", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(csv_dataset("", "y"), Err(DataError::EmptyCsv)));
        assert!(matches!(
            csv_dataset("a,b\n1,2\n", "y"),
            Err(DataError::MissingLabelColumn(_))
        ));
        assert!(matches!(
            csv_dataset("a,y\n1,-1\n", "y"),
            Err(DataError::Parse { .. })
        ));
        assert!(matches!(
            csv_dataset("a,y\n", "y"),
            Err(DataError::TooFewSamples { .. })
        ));
    }

    fn two_class(n_per_class: usize) -> Dataset {
        let n = 2 * n_per_class;
        let inputs = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(inputs, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    #[test]
    fn split_counts() {
        let s = stratified_split(&two_class(50), 0.2, 9).unwrap();
        assert_eq!(s.val.labels().iter().filter(|&&y| y == 0).count(), 10);
        assert_eq!(s.val.labels().iter().filter(|&&y| y == 1).count(), 10);
        assert_eq!(s, stratified_split(&two_class(50), 0.2, 9).unwrap());

        let tiny = stratified_split(&two_class(2), 0.5, 0).unwrap();
        assert_eq!(tiny.val.len(), 2);
        assert_ne!(tiny.val.labels()[0], tiny.val.labels()[1]);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let inputs = Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let d = Dataset::new(inputs, vec![0, 0, 1], 2).unwrap();
        assert!(matches!(
            stratified_split(&d, 0.5, 0),
            Err(DataError::ClassTooSmall { class: 1, count: 1 })
        ));
    }

    #[test]
    fn standardizer_centers_train_features() {
        let d = generate_synthetic(SyntheticKind::Moons, 300, 0.1, 2).unwrap();
        let s = prepare(&d, 0.2, 2).unwrap();
        let fitted = Standardizer::fit(&s.train);
        for (m, sd) in fitted.mean.iter().zip(&fitted.std) {
            assert!(m.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_indices(per_class in 2usize..40, frac in 0.05f64..0.95, seed: u64) {
            let d = two_class(per_class);
            let s = stratified_split(&d, frac, seed).unwrap();
            let mut all: Vec<usize> = s.train_indices.iter().chain(&s.val_indices).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
            for class in 0..2 {
                let val_c = s.val.labels().iter().filter(|&&y| y == class).count() as f64;
                proptest::prop_assert!((val_c - frac * per_class as f64).abs() <= 1.0);
            }
        }
    }
}
