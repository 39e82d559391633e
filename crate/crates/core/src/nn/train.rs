use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::cross_entropy;
use super::{
    backward, forward, forward_distilled, optimizer_step, KdConfig, MaskedNetwork, Network,
    NnError, OptimizerState,
};
use crate::data::Dataset;

/// One pass over `data` in shuffled mini-batches of `batch_size`.
///
/// Returns the sample-weighted mean of the per-batch losses, each measured
/// before its update. With distillation enabled, `teacher` is required and
/// must share the student's architecture.
pub fn train_one_epoch<R: Rng + ?Sized>(
    net: &mut MaskedNetwork,
    data: &Dataset,
    opt: &mut OptimizerState,
    kd: &KdConfig,
    teacher: Option<&Network>,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(NnError::Config("batch size must be >= 1".into()));
    }
    let teacher = match (kd.enabled, teacher) {
        (false, _) => None,
        (true, Some(t)) => {
            if !t.same_shape(net.network()) {
                return Err(NnError::Shape(
                    "teacher and student architectures differ".into(),
                ));
            }
            Some(t)
        }
        (true, None) => {
            return Err(NnError::Config(
                "distillation enabled without a teacher".into(),
            ))
        }
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let x = data.inputs().select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
        let cache = match teacher {
            Some(t) => forward_distilled(net, &x, &y, t, kd)?,
            None => forward(net, &x, &y)?,
        };
        let grads = backward(net, &cache)?;
        optimizer_step(net, &grads, opt)?;
        total += cache.loss * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and mean cross-entropy over the whole dataset.
pub fn evaluate(net: &MaskedNetwork, data: &Dataset) -> Result<Evaluation, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if let Some(&bad) = data
        .labels()
        .iter()
        .find(|&&y| y >= net.network().output_dim())
    {
        return Err(NnError::Shape(format!(
            "label {bad} outside network outputs"
        )));
    }
    let acts = net.network().activations(data.inputs())?;
    let logits = acts.last().expect("network has layers");
    let correct = data
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: cross_entropy(logits, data.labels()),
    })
}
