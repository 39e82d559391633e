//! Iterative magnitude pruning with randomized mask candidates.
//!
//! Each stage snapshots the model, builds a pool of candidate masks (one
//! deterministic top-k, the rest sampled ensembles), scores every candidate
//! with one epoch of high learning-rate training followed by validation,
//! rewinds to the snapshot, applies the winning mask and finetunes until the
//! validation loss stops improving.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::mask::{
    build_ensemble_mask, deterministic_topk_mask, introduced_randomness, BitMask, MaskError,
    SamplingConfig,
};
use crate::nn::{
    evaluate, restore, snapshot, train_one_epoch, Activation, Evaluation, KdConfig, MaskedNetwork,
    ModelSnapshot, Network, NnError, OptimizerKind, OptimizerState,
};
use crate::rng::{purpose, stream};
use crate::schedule::{ScheduleError, SparsitySchedule, StageContext};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("candidate {0} has no EMEP score")]
    Unscored(usize),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        source: Box<DriverError>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// A failed run, with the reports of every stage that completed.
#[derive(Debug, Error)]
#[error("{error} (after {} completed stage(s))", partial.len())]
pub struct RunFailure {
    pub error: DriverError,
    pub partial: Vec<StageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRunConfig {
    /// Layer widths, input first, classes last.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub schedule: SparsitySchedule,
    pub n_candidates: usize,
    pub sampling: SamplingConfig,
    /// EMEP trains at `base_lr * emep_lr_multiplier`.
    pub emep_lr_multiplier: f64,
    pub base_lr: f64,
    pub dense_epochs_max: usize,
    pub finetune_epochs_max: usize,
    /// Epochs without validation-loss improvement before training stops.
    pub convergence_patience: usize,
    pub kd: KdConfig,
    pub seed: u64,
    /// Worker threads for candidate evaluation; 1 runs serially.
    pub parallelism: usize,
}

impl PruneRunConfig {
    pub fn new(layer_widths: Vec<usize>, schedule: SparsitySchedule, seed: u64) -> Self {
        Self {
            layer_widths,
            hidden_activation: Activation::Relu,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            schedule,
            n_candidates: 8,
            sampling: SamplingConfig::default(),
            emep_lr_multiplier: 5.0,
            base_lr: 0.01,
            dense_epochs_max: 100,
            finetune_epochs_max: 50,
            convergence_patience: 5,
            kd: KdConfig::default(),
            seed,
            parallelism: 1,
        }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let fail = |m: String| Err(DriverError::Config(m));
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return fail(format!(
                "layer widths {:?} need >= 2 positive entries",
                self.layer_widths
            ));
        }
        if self.n_candidates == 0 {
            return fail("n_candidates must be >= 1".into());
        }
        if !(self.emep_lr_multiplier.is_finite() && self.emep_lr_multiplier > 1.0) {
            return fail(format!(
                "emep_lr_multiplier must be > 1, got {}",
                self.emep_lr_multiplier
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return fail(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.finetune_epochs_max == 0 || self.dense_epochs_max == 0 {
            return fail("epoch limits must be >= 1".into());
        }
        if self.convergence_patience == 0 {
            return fail("convergence_patience must be >= 1".into());
        }
        if self.parallelism == 0 {
            return fail("parallelism must be >= 1".into());
        }
        self.sampling.validate()?;
        self.kd.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskOrigin {
    Deterministic,
    Sampled,
}

impl std::fmt::Display for MaskOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskOrigin::Deterministic => "deterministic",
            MaskOrigin::Sampled => "sampled",
        })
    }
}

/// Validation outcome of one EMEP epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmepScore {
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub id: usize,
    pub masks: Vec<BitMask>,
    pub origin: MaskOrigin,
    /// Introduced randomness of each layer against the deterministic mask.
    pub ir_per_layer: Vec<f64>,
    pub emep: Option<EmepScore>,
}

impl CandidateMask {
    pub fn ir_mean(&self) -> f64 {
        mean(&self.ir_per_layer)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub id: usize,
    pub origin: MaskOrigin,
    pub ir_per_layer: Vec<f64>,
    pub ir_mean: f64,
    pub emep: Option<EmepScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub sparsity: f64,
    pub candidates: Vec<CandidateReport>,
    pub winner_id: usize,
    /// Validation metrics after finetuning with the winning mask.
    pub val: Evaluation,
    pub finetune_epochs: usize,
    /// Exactly-zero weights per layer after the stage.
    pub zero_counts: Vec<usize>,
    pub wall_ms: u64,
}

impl StageReport {
    pub fn winner(&self) -> &CandidateReport {
        &self.candidates[self.winner_id]
    }

    pub fn deterministic(&self) -> &CandidateReport {
        self.candidates
            .iter()
            .find(|c| c.origin == MaskOrigin::Deterministic)
            .expect("every pool has a deterministic candidate")
    }

    /// Bitwise comparison of everything the stage decided and produced,
    /// ignoring EMEP scores and wall-clock time.
    pub fn same_trajectory(&self, other: &StageReport) -> bool {
        self.stage == other.stage
            && self.sparsity.to_bits() == other.sparsity.to_bits()
            && self.winner().origin == other.winner().origin
            && self.winner().ir_per_layer == other.winner().ir_per_layer
            && self.val.accuracy.to_bits() == other.val.accuracy.to_bits()
            && self.val.loss.to_bits() == other.val.loss.to_bits()
            && self.finetune_epochs == other.finetune_epochs
            && self.zero_counts == other.zero_counts
    }
}

#[derive(Debug, Clone)]
pub struct ImpOutcome {
    pub network: MaskedNetwork,
    pub optimizer: OptimizerState,
    pub dense: Evaluation,
    pub dense_epochs: usize,
    pub reports: Vec<StageReport>,
}

impl ImpOutcome {
    /// Validation metrics of the final sparse network (dense if no stages).
    pub fn final_eval(&self) -> Evaluation {
        self.reports.last().map_or(self.dense, |r| r.val)
    }
}

/// Hooks into a run, for instrumentation and weight dumps.
pub trait RunObserver {
    /// After a candidate's EMEP evaluation, with the model it left behind.
    fn candidate_evaluated(
        &mut self,
        _stage: usize,
        _candidate: &CandidateMask,
        _stage_start: &ModelSnapshot,
        _net: &MaskedNetwork,
        _opt: &OptimizerState,
    ) {
    }

    /// After the winner is chosen and the model rewound, before pruning.
    fn winner_selected(
        &mut self,
        _stage: usize,
        _winner: &CandidateMask,
        _stage_start: &ModelSnapshot,
        _net: &MaskedNetwork,
        _opt: &OptimizerState,
    ) {
    }

    fn stage_finished(&mut self, _report: &StageReport, _net: &MaskedNetwork) {}
}

pub struct NoopObserver;

impl RunObserver for NoopObserver {}

/// Candidate 0 is the deterministic top-k mask; candidates `1..n` are
/// ensemble masks, each layer drawing from the stream
/// `(seed, stage, candidate id, layer)`.
pub fn generate_candidates(
    net: &MaskedNetwork,
    ctx: &StageContext,
    cfg: &PruneRunConfig,
) -> Result<Vec<CandidateMask>, DriverError> {
    let n_layers = net.network().layers().len();
    if ctx.layers.len() != n_layers {
        return Err(DriverError::Config(format!(
            "stage context covers {} layers, network has {n_layers}",
            ctx.layers.len()
        )));
    }
    let deterministic: Vec<BitMask> = (0..n_layers)
        .map(|l| deterministic_topk_mask(net.layer_weights(l), ctx.layers[l].retained))
        .collect::<Result<_, _>>()?;

    let mut pool = vec![CandidateMask {
        id: 0,
        ir_per_layer: vec![0.0; n_layers],
        masks: deterministic.clone(),
        origin: MaskOrigin::Deterministic,
        emep: None,
    }];
    for id in 1..cfg.n_candidates {
        let mut masks = Vec::with_capacity(n_layers);
        let mut ir_per_layer = Vec::with_capacity(n_layers);
        for (l, budget) in ctx.layers.iter().enumerate() {
            let mut rng = stream(
                cfg.seed,
                &[purpose::CANDIDATE, ctx.stage as u64, id as u64, l as u64],
            );
            let ens = build_ensemble_mask(
                net.layer_weights(l),
                budget.retained,
                budget.masks,
                &cfg.sampling,
                &mut rng,
            )?;
            ir_per_layer.push(introduced_randomness(&deterministic[l], &ens.mask)?);
            masks.push(ens.mask);
        }
        pool.push(CandidateMask {
            id,
            masks,
            origin: MaskOrigin::Sampled,
            ir_per_layer,
            emep: None,
        });
    }
    Ok(pool)
}

/// Everything a training phase needs besides the model itself.
#[derive(Clone, Copy)]
pub struct TrainingContext<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub teacher: Option<&'a Network>,
    pub cfg: &'a PruneRunConfig,
}

/// Apply `candidate`, train one epoch at the boosted learning rate, score on
/// validation data, then rewind `net` and `opt` to their entry state.
///
/// Every candidate of a stage sees the same batch order.
pub fn emep_score(
    net: &mut MaskedNetwork,
    opt: &mut OptimizerState,
    candidate: &CandidateMask,
    stage: usize,
    ctx: &TrainingContext<'_>,
) -> Result<EmepScore, DriverError> {
    let start = snapshot(net, opt);
    let outcome = (|| {
        net.set_masks(candidate.masks.clone())?;
        opt.learning_rate = ctx.cfg.base_lr * ctx.cfg.emep_lr_multiplier;
        let mut rng = stream(ctx.cfg.seed, &[purpose::EMEP_EPOCH, stage as u64]);
        train_one_epoch(
            net,
            ctx.train,
            opt,
            &ctx.cfg.kd,
            ctx.teacher,
            ctx.cfg.batch_size,
            &mut rng,
        )?;
        evaluate(net, ctx.val)
    })();
    restore(net, opt, &start)?;
    let eval = outcome?;
    Ok(EmepScore {
        accuracy: eval.accuracy,
        loss: eval.loss,
    })
}

/// Ordering where the better candidate compares greater: higher accuracy,
/// then lower loss, then lower id.
fn rank(a: &CandidateMask, b: &CandidateMask) -> Ordering {
    let (sa, sb) = (a.emep.expect("scored"), b.emep.expect("scored"));
    sa.accuracy
        .total_cmp(&sb.accuracy)
        .then_with(|| sb.loss.total_cmp(&sa.loss))
        .then_with(|| b.id.cmp(&a.id))
}

/// Best-scoring candidate.
pub fn mcss_select(candidates: &[CandidateMask]) -> Result<&CandidateMask, DriverError> {
    if let Some(c) = candidates.iter().find(|c| c.emep.is_none()) {
        return Err(DriverError::Unscored(c.id));
    }
    candidates
        .iter()
        .max_by(|a, b| rank(a, b))
        .ok_or(DriverError::EmptyPool)
}

/// Train until validation loss fails to improve for `patience` consecutive
/// epochs or `max_epochs` have run. Epoch `e` shuffles with the stream
/// `(seed, phase..., e)`.
fn train_to_convergence(
    net: &mut MaskedNetwork,
    opt: &mut OptimizerState,
    ctx: &TrainingContext<'_>,
    phase: &[u64],
    max_epochs: usize,
) -> Result<(usize, Evaluation), DriverError> {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut last = evaluate(net, ctx.val)?;
    let mut path = phase.to_vec();
    path.push(0);
    for epoch in 0..max_epochs {
        *path.last_mut().expect("non-empty") = epoch as u64;
        let mut rng = stream(ctx.cfg.seed, &path);
        train_one_epoch(
            net,
            ctx.train,
            opt,
            &ctx.cfg.kd,
            ctx.teacher,
            ctx.cfg.batch_size,
            &mut rng,
        )?;
        last = evaluate(net, ctx.val)?;
        if last.loss < best {
            best = last.loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= ctx.cfg.convergence_patience {
                return Ok((epoch + 1, last));
            }
        }
    }
    Ok((max_epochs, last))
}

struct DenseModel {
    net: MaskedNetwork,
    opt: OptimizerState,
    eval: Evaluation,
    epochs: usize,
}

fn train_dense(
    cfg: &PruneRunConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<DenseModel, DriverError> {
    cfg.validate()?;
    let widths = &cfg.layer_widths;
    if train.features() != widths[0] || val.features() != widths[0] {
        return Err(DriverError::Config(format!(
            "data has {} features, network expects {}",
            train.features(),
            widths[0]
        )));
    }
    let classes = train.class_count().max(val.class_count());
    if classes > widths[widths.len() - 1] {
        return Err(DriverError::Config(format!(
            "data has {classes} classes, network outputs {}",
            widths[widths.len() - 1]
        )));
    }
    let network = Network::init(
        widths,
        cfg.hidden_activation,
        &mut stream(cfg.seed, &[purpose::INIT]),
    )?;
    let mut net = MaskedNetwork::dense(network);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.base_lr, net.network());
    // no teacher while training the teacher itself
    let dense_cfg = PruneRunConfig {
        kd: KdConfig {
            enabled: false,
            ..cfg.kd
        },
        ..cfg.clone()
    };
    let ctx = TrainingContext {
        train,
        val,
        teacher: None,
        cfg: &dense_cfg,
    };
    let (epochs, eval) = train_to_convergence(
        &mut net,
        &mut opt,
        &ctx,
        &[purpose::DENSE_EPOCH],
        cfg.dense_epochs_max,
    )?;
    Ok(DenseModel {
        net,
        opt,
        eval,
        epochs,
    })
}

pub fn imp_run(
    cfg: &PruneRunConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<ImpOutcome, RunFailure> {
    imp_run_observed(cfg, train, val, &mut NoopObserver)
}

/// Full randomized pipeline: dense training, then for every scheduled
/// sparsity candidate generation, EMEP scoring, selection, rewind and
/// finetuning.
pub fn imp_run_observed(
    cfg: &PruneRunConfig,
    train: &Dataset,
    val: &Dataset,
    observer: &mut dyn RunObserver,
) -> Result<ImpOutcome, RunFailure> {
    let fail = |error: DriverError, partial: Vec<StageReport>| RunFailure { error, partial };
    let DenseModel {
        mut net,
        mut opt,
        eval: dense,
        epochs: dense_epochs,
    } = train_dense(cfg, train, val).map_err(|e| fail(e, Vec::new()))?;
    let teacher = cfg.kd.enabled.then(|| net.network().clone());
    let ctx = TrainingContext {
        train,
        val,
        teacher: teacher.as_ref(),
        cfg,
    };
    let pool = if cfg.parallelism > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.parallelism)
                .build()
                .map_err(|e| fail(DriverError::Pool(e.to_string()), Vec::new()))?,
        )
    } else {
        None
    };

    let mut reports = Vec::with_capacity(cfg.schedule.len());
    for (stage, &sparsity) in cfg.schedule.stages().iter().enumerate() {
        let report = run_stage(
            &mut net,
            &mut opt,
            stage,
            sparsity,
            &ctx,
            pool.as_ref(),
            observer,
        )
        .map_err(|e| DriverError::Stage {
            stage,
            source: Box::new(e),
        });
        match report {
            Ok(r) => {
                observer.stage_finished(&r, &net);
                reports.push(r);
            }
            Err(e) => return Err(fail(e, reports)),
        }
    }
    Ok(ImpOutcome {
        network: net,
        optimizer: opt,
        dense,
        dense_epochs,
        reports,
    })
}

fn run_stage(
    net: &mut MaskedNetwork,
    opt: &mut OptimizerState,
    stage: usize,
    sparsity: f64,
    ctx: &TrainingContext<'_>,
    pool: Option<&rayon::ThreadPool>,
    observer: &mut dyn RunObserver,
) -> Result<StageReport, DriverError> {
    let started = Instant::now();
    let cfg = ctx.cfg;
    let stage_ctx = StageContext::new(
        stage,
        sparsity,
        &net.network().weight_counts(),
        &cfg.sampling,
    )?;
    let start = snapshot(net, opt);
    let mut candidates = generate_candidates(net, &stage_ctx, cfg)?;

    match pool {
        None => {
            for cand in candidates.iter_mut() {
                cand.emep = Some(emep_score(net, opt, cand, stage, ctx)?);
                observer.candidate_evaluated(stage, cand, &start, net, opt);
            }
        }
        Some(pool) => {
            let results: Vec<_> = pool.install(|| {
                candidates
                    .par_iter()
                    .map(|cand| {
                        let (mut n, mut o) = (net.clone(), opt.clone());
                        emep_score(&mut n, &mut o, cand, stage, ctx).map(|s| (s, n, o))
                    })
                    .collect()
            });
            for (cand, result) in candidates.iter_mut().zip(results) {
                let (score, n, o) = result?;
                cand.emep = Some(score);
                observer.candidate_evaluated(stage, cand, &start, &n, &o);
            }
        }
    }

    let winner = mcss_select(&candidates)?.clone();
    restore(net, opt, &start)?;
    observer.winner_selected(stage, &winner, &start, net, opt);

    net.set_masks(winner.masks.clone())?;
    let (finetune_epochs, val) = train_to_convergence(
        net,
        opt,
        ctx,
        &[purpose::FINETUNE_EPOCH, stage as u64],
        cfg.finetune_epochs_max,
    )?;

    Ok(StageReport {
        stage,
        sparsity,
        candidates: candidates
            .iter()
            .map(|c| CandidateReport {
                id: c.id,
                origin: c.origin,
                ir_mean: c.ir_mean(),
                ir_per_layer: c.ir_per_layer.clone(),
                emep: c.emep,
            })
            .collect(),
        winner_id: winner.id,
        val,
        finetune_epochs,
        zero_counts: net.zero_counts(),
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Plain iterative magnitude pruning: top-k masks, no candidates, no EMEP.
pub fn run_deterministic_imp(
    cfg: &PruneRunConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<ImpOutcome, RunFailure> {
    run_deterministic_imp_observed(cfg, train, val, &mut NoopObserver)
}

/// [`run_deterministic_imp`] reporting each stage's top-k mask as the
/// selected winner. `candidate_evaluated` is never called.
pub fn run_deterministic_imp_observed(
    cfg: &PruneRunConfig,
    train: &Dataset,
    val: &Dataset,
    observer: &mut dyn RunObserver,
) -> Result<ImpOutcome, RunFailure> {
    let fail = |error: DriverError, partial: Vec<StageReport>| RunFailure { error, partial };
    let DenseModel {
        mut net,
        mut opt,
        eval: dense,
        epochs: dense_epochs,
    } = train_dense(cfg, train, val).map_err(|e| fail(e, Vec::new()))?;
    let teacher = cfg.kd.enabled.then(|| net.network().clone());
    let ctx = TrainingContext {
        train,
        val,
        teacher: teacher.as_ref(),
        cfg,
    };

    let mut reports = Vec::with_capacity(cfg.schedule.len());
    for (stage, &sparsity) in cfg.schedule.stages().iter().enumerate() {
        let started = Instant::now();
        let mut step = || -> Result<StageReport, DriverError> {
            let n_layers = net.network().layers().len();
            let sizes = net.network().weight_counts();
            let stage_ctx = StageContext::new(stage, sparsity, &sizes, &cfg.sampling)?;
            let masks = (0..n_layers)
                .map(|l| {
                    deterministic_topk_mask(net.layer_weights(l), stage_ctx.layers[l].retained)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let chosen = CandidateMask {
                id: 0,
                masks,
                origin: MaskOrigin::Deterministic,
                ir_per_layer: vec![0.0; n_layers],
                emep: None,
            };
            observer.winner_selected(stage, &chosen, &snapshot(&net, &opt), &net, &opt);
            net.set_masks(chosen.masks)?;
            let (finetune_epochs, val) = train_to_convergence(
                &mut net,
                &mut opt,
                &ctx,
                &[purpose::FINETUNE_EPOCH, stage as u64],
                cfg.finetune_epochs_max,
            )?;
            Ok(StageReport {
                stage,
                sparsity,
                candidates: vec![CandidateReport {
                    id: 0,
                    origin: MaskOrigin::Deterministic,
                    ir_per_layer: vec![0.0; n_layers],
                    ir_mean: 0.0,
                    emep: None,
                }],
                winner_id: 0,
                val,
                finetune_epochs,
                zero_counts: net.zero_counts(),
                wall_ms: started.elapsed().as_millis() as u64,
            })
        };
        match step() {
            Ok(r) => {
                observer.stage_finished(&r, &net);
                reports.push(r);
            }
            Err(e) => {
                return Err(fail(
                    DriverError::Stage {
                        stage,
                        source: Box::new(e),
                    },
                    reports,
                ));
            }
        }
    }
    Ok(ImpOutcome {
        network: net,
        optimizer: opt,
        dense,
        dense_epochs,
        reports,
    })
}
