use serde::{Deserialize, Serialize};

use super::{Gradients, MaskedNetwork, Network, NnError};
use crate::mask::BitMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

/// Optimizer hyperparameters and per-parameter state.
///
/// Moment tensors are ordered layer by layer, weights before bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    /// Adam with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8 and zeroed
    /// moments shaped after `net`.
    pub fn adam(learning_rate: f64, net: &Network) -> Self {
        let shapes = param_shapes(net);
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &Network) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(learning_rate),
            OptimizerKind::Adam => Self::adam(learning_rate, net),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    fn fits(&self, net: &Network) -> bool {
        match self.kind {
            OptimizerKind::Sgd => true,
            OptimizerKind::Adam => {
                let shapes = param_shapes(net);
                let ok = |m: &[Vec<f64>]| {
                    m.len() == shapes.len() && m.iter().zip(&shapes).all(|(v, &n)| v.len() == n)
                };
                ok(&self.first_moment) && ok(&self.second_moment)
            }
        }
    }
}

fn param_shapes(net: &Network) -> Vec<usize> {
    net.layers()
        .iter()
        .flat_map(|l| [l.weights.len(), l.bias.len()])
        .collect()
}

/// Apply one update. Nothing changes if any gradient is non-finite.
pub fn optimizer_step(
    net: &mut MaskedNetwork,
    grads: &Gradients,
    opt: &mut OptimizerState,
) -> Result<(), NnError> {
    let layers = net.network().layers();
    if grads.weights.len() != layers.len() || grads.biases.len() != layers.len() {
        return Err(NnError::Shape("gradient layer count mismatch".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        if grads.weights[i].len() != l.weights.len() || grads.biases[i].len() != l.bias.len() {
            return Err(NnError::Shape(format!(
                "layer {i}: gradient shape mismatch"
            )));
        }
        if grads.weights[i]
            .iter()
            .chain(&grads.biases[i])
            .any(|g| !g.is_finite())
        {
            return Err(NnError::NonFinite { layer: i });
        }
    }
    if !opt.fits(net.network()) {
        return Err(NnError::Shape(
            "optimizer state does not match network".into(),
        ));
    }

    opt.step += 1;
    let lr = opt.learning_rate;
    let kind = opt.kind;
    let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.epsilon);
    let t = opt.step as i32;
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));

    let network = net.network_mut();
    for (i, layer) in network.layers_mut().iter_mut().enumerate() {
        let params: [(&mut Vec<f64>, &Vec<f64>); 2] = [
            (&mut layer.weights, &grads.weights[i]),
            (&mut layer.bias, &grads.biases[i]),
        ];
        for (j, (p, g)) in params.into_iter().enumerate() {
            match kind {
                OptimizerKind::Sgd => {
                    for (w, gi) in p.iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut opt.first_moment[2 * i + j];
                    let v = &mut opt.second_moment[2 * i + j];
                    for (((w, gi), mi), vi) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
    net.apply_masks();
    Ok(())
}

/// Exact copy of parameters, masks, optimizer state and learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    network: Network,
    masks: Vec<BitMask>,
    optimizer: OptimizerState,
    learning_rate: f64,
}

impl ModelSnapshot {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn masks(&self) -> &[BitMask] {
        &self.masks
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Bitwise comparison against live state.
    pub fn matches(&self, net: &MaskedNetwork, opt: &OptimizerState) -> bool {
        bitwise_network_eq(&self.network, net.network())
            && self.masks == net.masks()
            && bitwise_optimizer_eq(&self.optimizer, opt)
            && self.learning_rate.to_bits() == opt.learning_rate.to_bits()
    }
}

pub fn snapshot(net: &MaskedNetwork, opt: &OptimizerState) -> ModelSnapshot {
    ModelSnapshot {
        network: net.network().clone(),
        masks: net.masks().to_vec(),
        optimizer: opt.clone(),
        learning_rate: opt.learning_rate,
    }
}

pub fn restore(
    net: &mut MaskedNetwork,
    opt: &mut OptimizerState,
    snap: &ModelSnapshot,
) -> Result<(), NnError> {
    if !snap.network.same_shape(net.network()) {
        return Err(NnError::Shape(
            "snapshot taken from a differently shaped network".into(),
        ));
    }
    if opt.kind != snap.optimizer.kind {
        return Err(NnError::Shape("snapshot optimizer kind differs".into()));
    }
    net.replace(snap.network.clone(), snap.masks.clone());
    *opt = snap.optimizer.clone();
    opt.learning_rate = snap.learning_rate;
    Ok(())
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn bitwise_network_eq(a: &Network, b: &Network) -> bool {
    a.same_shape(b)
        && a.layers().iter().zip(b.layers()).all(|(x, y)| {
            x.activation == y.activation
                && bits_eq(&x.weights, &y.weights)
                && bits_eq(&x.bias, &y.bias)
        })
}

pub fn bitwise_optimizer_eq(a: &OptimizerState, b: &OptimizerState) -> bool {
    let moments_eq = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| bits_eq(p, q))
    };
    a.kind == b.kind
        && a.step == b.step
        && bits_eq(
            &[a.learning_rate, a.beta1, a.beta2, a.epsilon],
            &[b.learning_rate, b.beta1, b.beta2, b.epsilon],
        )
        && moments_eq(&a.first_moment, &b.first_moment)
        && moments_eq(&a.second_moment, &b.second_moment)
}
