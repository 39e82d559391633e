//! Sparsity schedules across pruning stages and the number of sampled masks
//! per stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::SamplingConfig;

/// Slack for products like `0.54 * 100` that land a hair above an integer.
const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule is empty")]
    Empty,
    #[error("stage {index}: sparsity {value} outside (0, 1)")]
    OutOfRange { index: usize, value: f64 },
    #[error("stage {index}: sparsity {value} does not exceed previous stage {previous}")]
    NotIncreasing {
        index: usize,
        value: f64,
        previous: f64,
    },
    #[error("layer {layer}: sparsity {sparsity} leaves no weights out of {total}")]
    NothingRetained {
        layer: usize,
        total: usize,
        sparsity: f64,
    },
    #[error("layer {layer}: cannot prune a layer with {total} weights")]
    LayerTooSmall { layer: usize, total: usize },
}

/// How the number of sampled masks tracks the pruned count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomnessSchedule {
    /// `M = sr * C_pruned`: more masks, less randomness, as pruning proceeds.
    #[default]
    Decrease,
    /// `M = sr * C_kept`: fewer masks, more randomness, as pruning proceeds.
    Increase,
}

impl std::str::FromStr for RandomnessSchedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "decrease" => Ok(Self::Decrease),
            "increase" => Ok(Self::Increase),
            other => Err(format!("unknown randomness schedule `{other}`")),
        }
    }
}

impl std::fmt::Display for RandomnessSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Decrease => "decrease",
            Self::Increase => "increase",
        })
    }
}

/// Strictly increasing list of target sparsities in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule(Vec<f64>);

impl SparsitySchedule {
    pub fn new(stages: Vec<f64>) -> Result<Self, ScheduleError> {
        validate_schedule(&stages)?;
        Ok(Self(stages))
    }

    pub fn stages(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn validate_schedule(stages: &[f64]) -> Result<(), ScheduleError> {
    if stages.is_empty() {
        return Err(ScheduleError::Empty);
    }
    for (index, &value) in stages.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(ScheduleError::OutOfRange { index, value });
        }
        if index > 0 && value <= stages[index - 1] {
            return Err(ScheduleError::NotIncreasing {
                index,
                value,
                previous: stages[index - 1],
            });
        }
    }
    Ok(())
}

/// Weights zeroed in a layer of `total` weights at `sparsity`: `ceil(s * C)`.
pub fn pruned_count(total: usize, sparsity: f64) -> usize {
    ((sparsity * total as f64) - ROUNDING_SLACK).ceil().max(0.0) as usize
}

/// Number of masks summed into one ensemble, clamped to at least one.
pub fn masks_count(kind: RandomnessSchedule, sr: f64, total: usize, sparsity: f64) -> u32 {
    let pruned = pruned_count(total, sparsity);
    let base = match kind {
        RandomnessSchedule::Decrease => pruned,
        RandomnessSchedule::Increase => total - pruned,
    };
    let m = (sr * base as f64 + ROUNDING_SLACK).floor();
    if m < 1.0 {
        1
    } else if m > u32::MAX as f64 {
        u32::MAX
    } else {
        m as u32
    }
}

/// Per-layer pruning budget at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBudget {
    /// Total weights `C`.
    pub total: usize,
    /// Zeros after pruning `x`.
    pub pruned: usize,
    /// Retained weights `k`.
    pub retained: usize,
    /// Masks summed per ensemble `M`.
    pub masks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageContext {
    pub stage: usize,
    pub sparsity: f64,
    pub layers: Vec<LayerBudget>,
}

impl StageContext {
    pub fn new(
        stage: usize,
        sparsity: f64,
        layer_sizes: &[usize],
        sampling: &SamplingConfig,
    ) -> Result<Self, ScheduleError> {
        let layers = layer_sizes
            .iter()
            .enumerate()
            .map(|(layer, &total)| {
                if total < 2 {
                    return Err(ScheduleError::LayerTooSmall { layer, total });
                }
                let pruned = pruned_count(total, sparsity);
                if pruned >= total {
                    return Err(ScheduleError::NothingRetained {
                        layer,
                        total,
                        sparsity,
                    });
                }
                Ok(LayerBudget {
                    total,
                    pruned,
                    retained: total - pruned,
                    masks: masks_count(sampling.schedule, sampling.sampling_ratio, total, sparsity),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            stage,
            sparsity,
            layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_count_examples() {
        use RandomnessSchedule::*;
        assert_eq!(masks_count(Decrease, 0.01, 10_000, 0.83), 83);
        assert_eq!(masks_count(Increase, 0.01, 10_000, 0.83), 17);
        assert_eq!(masks_count(Decrease, 5e-5, 10_000, 0.54), 1);
    }

    #[test]
    fn pruned_count_ignores_float_noise() {
        // 0.54 * 100 == 54.00000000000001 in binary floating point
        assert_eq!(pruned_count(100, 0.54), 54);
        assert_eq!(pruned_count(64, 0.54), 35);
        assert_eq!(pruned_count(1024, 0.9375), 960);
        assert_eq!(pruned_count(10, 0.5), 5);
    }

    #[test]
    fn published_schedules_validate() {
        assert!(SparsitySchedule::new(vec![0.54, 0.83, 0.91, 0.9375]).is_ok());
        assert!(SparsitySchedule::new(vec![
            0.54, 0.83, 0.875, 0.9, 0.92, 0.9275, 0.93, 0.935, 0.9375
        ])
        .is_ok());
    }

    #[test]
    fn invalid_schedules_name_the_stage() {
        assert_eq!(
            validate_schedule(&[0.5, 0.5]),
            Err(ScheduleError::NotIncreasing {
                index: 1,
                value: 0.5,
                previous: 0.5
            })
        );
        assert_eq!(
            validate_schedule(&[0.2, 1.0]),
            Err(ScheduleError::OutOfRange {
                index: 1,
                value: 1.0
            })
        );
        assert_eq!(validate_schedule(&[]), Err(ScheduleError::Empty));
        assert!(validate_schedule(&[f64::NAN]).is_err());
    }

    #[test]
    fn stage_context_budgets() {
        let ctx = StageContext::new(0, 0.54, &[64, 1024], &SamplingConfig::default()).unwrap();
        for b in &ctx.layers {
            assert_eq!(b.pruned + b.retained, b.total);
            assert!(b.retained >= 1 && b.masks >= 1);
        }
        assert!(StageContext::new(0, 0.9, &[4], &SamplingConfig::default()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn masks_count_monotone(sr in 1e-4f64..0.5, total in 2usize..5000, a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            use RandomnessSchedule::*;
            proptest::prop_assert!(masks_count(Decrease, sr, total, lo) <= masks_count(Decrease, sr, total, hi));
            proptest::prop_assert!(masks_count(Increase, sr, total, lo) >= masks_count(Increase, sr, total, hi));
            proptest::prop_assert!(masks_count(Increase, sr, total, hi) >= 1);
        }
    }
}
