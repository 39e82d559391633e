//! Pruning masks: magnitude-derived sampling distributions, weighted sampling
//! without replacement, ensemble masks, deterministic top-k masks and the
//! introduced-randomness metric.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::RandomnessSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("cannot retain {k} elements: only {available} eligible (non-zero) weights")]
    InsufficientSupport { k: usize, available: usize },
    #[error("cannot retain {k} of {len} weights")]
    RetainExceedsLength { k: usize, len: usize },
    #[error("masks differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("masks retain different counts ({left} vs {right})")]
    RetainedMismatch { left: usize, right: usize },
    #[error("introduced randomness needs at least one pruned weight (C={len}, k={k})")]
    NothingPruned { len: usize, k: usize },
    #[error("ensemble needs at least one sampled mask")]
    NoMasks,
    #[error("invalid sampling config: {0}")]
    Config(String),
}

/// Binary retain (`true`) / prune (`false`) indicator for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMask {
    bits: Vec<bool>,
    retained: usize,
}

impl BitMask {
    pub fn ones(len: usize) -> Self {
        Self {
            bits: vec![true; len],
            retained: len,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
            retained: 0,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let retained = bits.iter().filter(|&&b| b).count();
        Self { bits, retained }
    }

    /// Mask of length `len` retaining exactly `indices` (duplicates collapse).
    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; len];
        for &i in indices {
            bits[i] = true;
        }
        Self::from_bits(bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of retained entries.
    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn pruned(&self) -> usize {
        self.bits.len() - self.retained
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Zero every weight at a pruned position.
    pub fn apply(&self, weights: &mut [f64]) {
        debug_assert_eq!(weights.len(), self.bits.len());
        for (w, &keep) in weights.iter_mut().zip(&self.bits) {
            if !keep {
                *w = 0.0;
            }
        }
    }
}

/// Parameters of the magnitude-derived sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Sampling ratio `sr`: scales the number of masks summed per ensemble.
    pub sampling_ratio: f64,
    /// Sharpening exponent `T` applied to magnitudes.
    pub exponent: u32,
    /// Support-width multiplier `r`: only the top `ceil(r * k)` magnitudes
    /// receive non-zero probability.
    pub support_multiplier: f64,
    pub schedule: RandomnessSchedule,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            sampling_ratio: 5e-5,
            exponent: 5,
            support_multiplier: 2.0,
            schedule: RandomnessSchedule::Decrease,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(self.sampling_ratio.is_finite() && self.sampling_ratio > 0.0) {
            return Err(MaskError::Config(format!(
                "sampling ratio must be > 0, got {}",
                self.sampling_ratio
            )));
        }
        if self.exponent < 1 {
            return Err(MaskError::Config("exponent must be >= 1".into()));
        }
        if !(self.support_multiplier.is_finite() && self.support_multiplier >= 1.0) {
            return Err(MaskError::Config(format!(
                "support multiplier must be >= 1, got {}",
                self.support_multiplier
            )));
        }
        Ok(())
    }
}

/// Normalized sampling distribution over weight indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    support: Vec<usize>,
}

impl ProbVector {
    /// Build from non-negative weights; normalizes to sum 1.
    ///
    /// Returns `None` if any entry is negative or non-finite, or all are zero.
    pub fn from_weights(weights: &[f64]) -> Option<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return None;
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let support = probs
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| (p > 0.0).then_some(i))
            .collect();
        Some(Self { probs, support })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Indices with strictly positive probability, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Order indices by descending magnitude, lower index first on ties.
fn by_magnitude_desc(w: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        w[b].abs()
            .partial_cmp(&w[a].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Indices of the `k` largest magnitudes, ascending.
fn top_magnitudes(w: &[f64], candidates: &mut [usize], k: usize) -> Vec<usize> {
    let cmp = by_magnitude_desc(w);
    if k < candidates.len() && k > 0 {
        candidates.select_nth_unstable_by(k - 1, &cmp);
    }
    let mut top = candidates[..k.min(candidates.len())].to_vec();
    top.sort_unstable();
    top
}

/// Sampling probabilities `|w|^T`, restricted to the `ceil(r * k)` largest
/// non-zero magnitudes and renormalized.
pub fn derive_sampling_probs(
    w: &[f64],
    k: usize,
    cfg: &SamplingConfig,
) -> Result<ProbVector, MaskError> {
    cfg.validate()?;
    let mut nonzero: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
    if nonzero.len() < k {
        return Err(MaskError::InsufficientSupport {
            k,
            available: nonzero.len(),
        });
    }
    let width = (cfg.support_multiplier * k as f64).ceil() as usize;
    let support = if width >= nonzero.len() {
        nonzero
    } else {
        top_magnitudes(w, &mut nonzero, width)
    };

    // Scale by the largest magnitude before exponentiating to keep the
    // powers in range; the sampler is scale-invariant.
    let max = support.iter().map(|&i| w[i].abs()).fold(0.0_f64, f64::max);
    let mut raw = vec![0.0; w.len()];
    for &i in &support {
        let v = (w[i].abs() / max).powi(cfg.exponent as i32);
        raw[i] = v.max(f64::MIN_POSITIVE);
    }
    let total: f64 = raw.iter().sum();
    let probs = raw.into_iter().map(|v| v / total).collect();
    Ok(ProbVector { probs, support })
}

/// Draw `k` distinct indices, each successive draw proportional to `p` among
/// the remaining indices.
///
/// One pass: every support index gets key `ln(u) / p` (the log of
/// `u^(1/p)`) and the `k` largest keys win. Result is sorted ascending.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    p: &ProbVector,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, MaskError> {
    let support = p.support();
    if support.len() < k {
        return Err(MaskError::InsufficientSupport {
            k,
            available: support.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut keyed: Vec<(f64, usize)> = support
        .iter()
        .map(|&i| {
            // 1 - u lies in (0, 1], so the log is finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / p.probs[i], i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, cmp);
    }
    let mut chosen: Vec<usize> = keyed[..k].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Per-index occurrence counts across the sampled masks of an ensemble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleCount {
    pub counts: Vec<u32>,
    pub masks_added: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleMask {
    pub mask: BitMask,
    pub counts: EnsembleCount,
}

/// Sum `masks` sampled masks of size `k` and keep the `k` most frequent
/// indices. Count ties go to the larger magnitude, then the lower index.
pub fn build_ensemble_mask<R: Rng + ?Sized>(
    w: &[f64],
    k: usize,
    masks: u32,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<EnsembleMask, MaskError> {
    if masks == 0 {
        return Err(MaskError::NoMasks);
    }
    let probs = derive_sampling_probs(w, k, cfg)?;
    let mut counts = vec![0u32; w.len()];
    for _ in 0..masks {
        for i in sample_without_replacement(&probs, k, rng)? {
            counts[i] += 1;
        }
    }

    let mut order: Vec<usize> = probs.support().to_vec();
    let mag = by_magnitude_desc(w);
    let cmp = |a: &usize, b: &usize| counts[*b].cmp(&counts[*a]).then_with(|| mag(a, b));
    if k > 0 && k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    let mask = BitMask::from_indices(w.len(), &order[..k]);
    Ok(EnsembleMask {
        mask,
        counts: EnsembleCount {
            counts,
            masks_added: masks,
        },
    })
}

/// Retain exactly the `k` largest magnitudes; ties go to the lower index.
pub fn deterministic_topk_mask(w: &[f64], k: usize) -> Result<BitMask, MaskError> {
    if k > w.len() {
        return Err(MaskError::RetainExceedsLength { k, len: w.len() });
    }
    let mut all: Vec<usize> = (0..w.len()).collect();
    Ok(BitMask::from_indices(
        w.len(),
        &top_magnitudes(w, &mut all, k),
    ))
}

/// Pruning boundary: the `k`-th largest magnitude (`None` when `k == 0` or
/// `k > len`).
pub fn pruning_boundary(w: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k > w.len() {
        return None;
    }
    let mut mags: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    let (_, kth, _) =
        mags.select_nth_unstable_by(k - 1, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    Some(*kth)
}

/// Introduced randomness of `sampled` relative to `deterministic`:
/// `(C - k - C_s) / C_s`, where `C_s` counts weights pruned by both masks.
///
/// Returns `f64::INFINITY` (and logs a warning) when the pruned sets are
/// disjoint.
pub fn introduced_randomness(deterministic: &BitMask, sampled: &BitMask) -> Result<f64, MaskError> {
    if deterministic.len() != sampled.len() {
        return Err(MaskError::LengthMismatch {
            left: deterministic.len(),
            right: sampled.len(),
        });
    }
    if deterministic.retained() != sampled.retained() {
        return Err(MaskError::RetainedMismatch {
            left: deterministic.retained(),
            right: sampled.retained(),
        });
    }
    let len = deterministic.len();
    let k = deterministic.retained();
    if k >= len {
        return Err(MaskError::NothingPruned { len, k });
    }
    let both_pruned = deterministic
        .bits()
        .iter()
        .zip(sampled.bits())
        .filter(|(&a, &b)| !a && !b)
        .count();
    if both_pruned == 0 {
        log::warn!("pruned sets are disjoint (C={len}, k={k}); introduced randomness is unbounded");
        return Ok(f64::INFINITY);
    }
    Ok((len - k - both_pruned) as f64 / both_pruned as f64)
}
