//! Randomized pruning-mask generation and selection for dense networks.
//!
//! Retained weights are sampled from magnitude-derived distributions rather
//! than chosen by a hard threshold. Randomness is controlled by summing
//! several sampled masks into an ensemble, and each pruning stage keeps the
//! best of several candidate masks, judged after one epoch of
//! high learning-rate training.
//!
//! - [`mask`]: sampling distributions, samplers, ensemble and top-k masks,
//!   introduced randomness.
//! - [`schedule`]: sparsity schedules and masks-per-ensemble rules.
//! - [`nn`]: the small network, its trainer and snapshots.
//! - [`data`]: synthetic and CSV datasets.
//! - [`driver`]: iterative magnitude pruning with candidate selection.

pub mod data;
pub mod driver;
pub mod mask;
pub mod nn;
pub mod rng;
pub mod schedule;

pub use driver::{imp_run, run_deterministic_imp, PruneRunConfig, StageReport};
pub use mask::{BitMask, SamplingConfig};
pub use schedule::{RandomnessSchedule, SparsitySchedule};
