use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, NnError};
use crate::mask::BitMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Self::Relu),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Fully connected layer. `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(NnError::Shape(format!(
                "layer {outputs}x{inputs} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }

    /// `activation(x W^T + b)` for every row of `x`.
    fn propagate(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let orow = out.row_mut(r);
            for (o, slot) in orow.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let z = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                *slot = self.activation.apply(z);
            }
        }
        out
    }
}

/// Dense feedforward network; the last layer's outputs are logits for a
/// softmax cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs != pair[0].outputs {
                return Err(NnError::Shape(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    i + 1,
                    pair[1].inputs,
                    i,
                    pair[0].outputs
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { layer: i });
            }
        }
        Ok(Self { layers })
    }

    /// Layers sized by `widths` (input first). Weights are uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero. Hidden layers use
    /// `hidden`; the output layer is linear.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::Shape(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                let activation = if i == last {
                    Activation::Identity
                } else {
                    hidden
                };
                Layer::new(fan_in, fan_out, weights, vec![0.0; fan_out], activation)
            })
            .collect::<Result<_, _>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Weight count per layer (biases excluded).
    pub fn weight_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.len()).collect()
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    /// Post-activation output of every layer; the last entry is the logits.
    pub fn activations(&self, batch: &Matrix) -> Result<Vec<Matrix>, NnError> {
        if batch.cols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer.propagate(acts.last().unwrap_or(batch));
            acts.push(next);
        }
        Ok(acts)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Network with one retain mask per layer. Biases are never masked.
///
/// Every parameter change bumps an internal version so that forward caches
/// taken before the change are rejected by `backward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedNetwork {
    network: Network,
    masks: Vec<BitMask>,
    #[serde(skip)]
    version: u64,
}

impl MaskedNetwork {
    /// Dense network with all-ones masks.
    pub fn dense(network: Network) -> Self {
        let masks = network
            .layers
            .iter()
            .map(|l| BitMask::ones(l.weights.len()))
            .collect();
        Self {
            network,
            masks,
            version: 0,
        }
    }

    pub fn with_masks(network: Network, masks: Vec<BitMask>) -> Result<Self, NnError> {
        let mut net = Self::dense(network);
        net.set_masks(masks)?;
        Ok(net)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn masks(&self) -> &[BitMask] {
        &self.masks
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.network.layers[layer].weights
    }

    /// Replace every mask and zero the newly pruned weights.
    pub fn set_masks(&mut self, masks: Vec<BitMask>) -> Result<(), NnError> {
        if masks.len() != self.network.layers.len() {
            return Err(NnError::Shape(format!(
                "{} masks for {} layers",
                masks.len(),
                self.network.layers.len()
            )));
        }
        for (i, (m, l)) in masks.iter().zip(&self.network.layers).enumerate() {
            if m.len() != l.weights.len() {
                return Err(NnError::Shape(format!(
                    "layer {i}: mask length {} != weight count {}",
                    m.len(),
                    l.weights.len()
                )));
            }
        }
        self.masks = masks;
        self.apply_masks();
        Ok(())
    }

    pub(crate) fn apply_masks(&mut self) {
        for (m, l) in self.masks.iter().zip(self.network.layers.iter_mut()) {
            m.apply(&mut l.weights);
        }
        self.touch();
    }

    /// Mutable access to parameters; invalidates outstanding caches.
    /// Callers must re-apply masks, which `optimizer_step` does.
    pub(crate) fn network_mut(&mut self) -> &mut Network {
        self.touch();
        &mut self.network
    }

    /// Overwrite parameters (used by restore). Masks are taken from `masks`.
    pub(crate) fn replace(&mut self, network: Network, masks: Vec<BitMask>) {
        self.network = network;
        self.masks = masks;
        self.touch();
    }

    fn touch(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    /// Per-layer count of weights that are exactly zero.
    pub fn zero_counts(&self) -> Vec<usize> {
        self.network
            .layers
            .iter()
            .map(|l| l.weights.iter().filter(|&&w| w == 0.0).count())
            .collect()
    }
}

/// Weights of the auxiliary teacher-matching losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub enabled: bool,
    /// Weight of the mean squared error between hidden-layer outputs.
    pub alpha_hidden: f64,
    /// Weight of the mean squared error between logits.
    pub alpha_output: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha_hidden: 1.0,
            alpha_output: 1.0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        for (name, v) in [
            ("alpha_hidden", self.alpha_hidden),
            ("alpha_output", self.alpha_output),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(NnError::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Teacher activations the student is pulled toward.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    /// Teacher outputs of every layer, logits last.
    pub activations: Vec<Matrix>,
    pub alpha_hidden: f64,
    pub alpha_output: f64,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    input: Matrix,
    labels: Vec<usize>,
    /// Post-activation output of every layer; the last is the logits.
    pub activations: Vec<Matrix>,
    /// Row-wise softmax of the logits.
    pub probabilities: Matrix,
    /// Mean cross-entropy over the batch.
    pub cross_entropy: f64,
    /// `alpha_hidden * hidden MSE`, zero without distillation.
    pub hidden_loss: f64,
    /// `alpha_output * logit MSE`, zero without distillation.
    pub output_loss: f64,
    /// Total objective.
    pub loss: f64,
    distill: Option<DistillTargets>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        self.activations.last().expect("network has layers")
    }
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy of `logits` against `labels`, via log-sum-exp.
pub(crate) fn cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn mean_squared(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.data().len();
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64
}

fn check_labels(net: &Network, batch: &Matrix, labels: &[usize]) -> Result<(), NnError> {
    if labels.len() != batch.rows() {
        return Err(NnError::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            batch.rows()
        )));
    }
    if batch.rows() == 0 {
        return Err(NnError::Shape("empty batch".into()));
    }
    let classes = net.output_dim();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(NnError::Shape(format!(
            "label {bad} outside {classes} classes"
        )));
    }
    Ok(())
}

/// Forward pass with mean cross-entropy loss.
pub fn forward(
    net: &MaskedNetwork,
    batch: &Matrix,
    labels: &[usize],
) -> Result<ForwardCache, NnError> {
    forward_inner(net, batch, labels, None)
}

/// Forward pass whose loss adds hidden-state and logit matching terms
/// against `teacher` (same architecture as the student).
pub fn forward_distilled(
    net: &MaskedNetwork,
    batch: &Matrix,
    labels: &[usize],
    teacher: &Network,
    kd: &KdConfig,
) -> Result<ForwardCache, NnError> {
    kd.validate()?;
    if !teacher.same_shape(&net.network) {
        return Err(NnError::Shape(
            "teacher and student architectures differ".into(),
        ));
    }
    let targets = DistillTargets {
        activations: teacher.activations(batch)?,
        alpha_hidden: kd.alpha_hidden,
        alpha_output: kd.alpha_output,
    };
    forward_inner(net, batch, labels, Some(targets))
}

fn forward_inner(
    net: &MaskedNetwork,
    batch: &Matrix,
    labels: &[usize],
    distill: Option<DistillTargets>,
) -> Result<ForwardCache, NnError> {
    check_labels(&net.network, batch, labels)?;
    let activations = net.network.activations(batch)?;
    let logits = activations.last().expect("network has layers");
    let probabilities = softmax_rows(logits);
    let cross_entropy = cross_entropy(logits, labels);

    let (hidden_loss, output_loss) = match &distill {
        None => (0.0, 0.0),
        Some(t) => {
            let n_hidden = activations.len() - 1;
            let hidden = if n_hidden == 0 {
                0.0
            } else {
                activations[..n_hidden]
                    .iter()
                    .zip(&t.activations)
                    .map(|(s, t)| mean_squared(s, t))
                    .sum::<f64>()
                    / n_hidden as f64
            };
            let output = mean_squared(logits, &t.activations[n_hidden]);
            (t.alpha_hidden * hidden, t.alpha_output * output)
        }
    };

    Ok(ForwardCache {
        version: net.version,
        input: batch.clone(),
        labels: labels.to_vec(),
        loss: cross_entropy + hidden_loss + output_loss,
        activations,
        probabilities,
        cross_entropy,
        hidden_loss,
        output_loss,
        distill,
    })
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Backpropagate the loss recorded in `cache`. Gradients at masked-out
/// weights are zero.
pub fn backward(net: &MaskedNetwork, cache: &ForwardCache) -> Result<Gradients, NnError> {
    if cache.version != net.version {
        return Err(NnError::StaleCache {
            cache: cache.version,
            network: net.version,
        });
    }
    let layers = &net.network.layers;
    let batch = cache.input.rows();
    let n_layers = layers.len();
    let n_hidden = n_layers - 1;
    let classes = net.network.output_dim();

    // dLoss/dlogits
    let mut delta = cache.probabilities.clone();
    for (r, &y) in cache.labels.iter().enumerate() {
        let row = delta.row_mut(r);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= batch as f64;
        }
    }
    if let Some(t) = &cache.distill {
        let scale = 2.0 * t.alpha_output / (batch * classes) as f64;
        let logits = cache.logits();
        let target = &t.activations[n_hidden];
        for ((d, s), q) in delta
            .data_mut()
            .iter_mut()
            .zip(logits.data())
            .zip(target.data())
        {
            *d += scale * (s - q);
        }
    }

    let mut weights = vec![Vec::new(); n_layers];
    let mut biases = vec![Vec::new(); n_layers];
    for l in (0..n_layers).rev() {
        let layer = &layers[l];
        let prev = if l == 0 {
            &cache.input
        } else {
            &cache.activations[l - 1]
        };

        let mut gw = vec![0.0; layer.weights.len()];
        let mut gb = vec![0.0; layer.outputs];
        for r in 0..batch {
            let d = delta.row(r);
            let a = prev.row(r);
            for o in 0..layer.outputs {
                gb[o] += d[o];
                if d[o] != 0.0 {
                    let g = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi += d[o] * ai;
                    }
                }
            }
        }
        net.masks[l].apply(&mut gw);
        weights[l] = gw;
        biases[l] = gb;

        if l == 0 {
            break;
        }
        // dLoss/d(output of layer l-1)
        let mut upstream = Matrix::zeros(batch, layer.inputs);
        for r in 0..batch {
            let d = delta.row(r);
            let u = upstream.row_mut(r);
            for (&dk, w) in d.iter().zip(layer.weights.chunks_exact(layer.inputs)) {
                if dk == 0.0 {
                    continue;
                }
                for (ui, wi) in u.iter_mut().zip(w) {
                    *ui += dk * wi;
                }
            }
        }
        let below = &cache.activations[l - 1];
        if let Some(t) = &cache.distill {
            let scale = 2.0 * t.alpha_hidden / (batch * below.cols() * n_hidden) as f64;
            let target = &t.activations[l - 1];
            for ((u, s), q) in upstream
                .data_mut()
                .iter_mut()
                .zip(below.data())
                .zip(target.data())
            {
                *u += scale * (s - q);
            }
        }
        let act = layers[l - 1].activation;
        for (u, &y) in upstream.data_mut().iter_mut().zip(below.data()) {
            *u *= act.derivative_from_output(y);
        }
        delta = upstream;
    }
    Ok(Gradients { weights, biases })
}
