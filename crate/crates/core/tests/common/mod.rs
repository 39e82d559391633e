//! Independent reference computations shared by the integration suites.
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashSet;

use randprune::nn::{Activation, Layer};

/// Exact inclusion probability of every item when `k` items are drawn one
/// at a time without replacement, each draw proportional to `p` among the
/// items not yet drawn. Enumerates every ordered draw sequence.
pub fn inclusion_probabilities(p: &[f64], k: usize) -> Vec<f64> {
    fn walk(p: &[f64], k: usize, taken: &mut Vec<usize>, prob: f64, out: &mut [f64]) {
        if taken.len() == k {
            for &i in taken.iter() {
                out[i] += prob;
            }
            return;
        }
        let remaining: f64 = (0..p.len())
            .filter(|i| !taken.contains(i))
            .map(|i| p[i])
            .sum();
        for i in 0..p.len() {
            if taken.contains(&i) || p[i] == 0.0 {
                continue;
            }
            taken.push(i);
            walk(p, k, taken, prob * p[i] / remaining, out);
            taken.pop();
        }
    }
    let mut out = vec![0.0; p.len()];
    walk(p, k, &mut Vec::new(), 1.0, &mut out);
    out
}

/// Introduced randomness by explicit set arithmetic.
pub fn ir_by_sets(det_keep: &[bool], rand_keep: &[bool]) -> f64 {
    let det_pruned: HashSet<usize> = (0..det_keep.len()).filter(|&i| !det_keep[i]).collect();
    let rand_pruned: HashSet<usize> = (0..rand_keep.len()).filter(|&i| !rand_keep[i]).collect();
    let common = det_pruned.intersection(&rand_pruned).count();
    let c = det_keep.len();
    let k = c - det_pruned.len();
    if common == 0 {
        f64::INFINITY
    } else {
        (c as f64 - k as f64 - common as f64) / common as f64
    }
}

/// Per-layer outputs of one sample, computed with plain scalar loops.
pub fn scalar_activations(layers: &[Layer], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::new();
    let mut input = x.to_vec();
    for layer in layers {
        let mut out = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let mut z = layer.bias[o];
            for i in 0..layer.inputs {
                z += layer.weights[o * layer.inputs + i] * input[i];
            }
            out.push(match layer.activation {
                Activation::Relu => {
                    if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                }
                Activation::Identity => z,
            });
        }
        acts.push(out.clone());
        input = out;
    }
    acts
}

/// Mean cross-entropy, plus `alpha_hidden * mean hidden MSE +
/// alpha_output * logit MSE` against `teacher` when given.
pub fn scalar_loss(
    layers: &[Layer],
    xs: &[Vec<f64>],
    ys: &[usize],
    teacher: Option<(&[Layer], f64, f64)>,
) -> f64 {
    let n = xs.len() as f64;
    let mut ce = 0.0;
    let mut hidden_sq = vec![0.0; layers.len() - 1];
    let mut out_sq = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let acts = scalar_activations(layers, x);
        let logits = acts.last().unwrap();
        let mut denom = 0.0;
        for z in logits {
            denom += z.exp();
        }
        ce += -(logits[y].exp() / denom).ln();
        if let Some((t, _, _)) = teacher {
            let tacts = scalar_activations(t, x);
            for l in 0..layers.len() - 1 {
                for (a, b) in acts[l].iter().zip(&tacts[l]) {
                    hidden_sq[l] += (a - b) * (a - b) / (n * acts[l].len() as f64);
                }
            }
            for (a, b) in logits.iter().zip(tacts.last().unwrap()) {
                out_sq += (a - b) * (a - b) / (n * logits.len() as f64);
            }
        }
    }
    let mut loss = ce / n;
    if let Some((_, ah, ao)) = teacher {
        if !hidden_sq.is_empty() {
            loss += ah * hidden_sq.iter().sum::<f64>() / hidden_sq.len() as f64;
        }
        loss += ao * out_sq;
    }
    loss
}

/// Central finite differences of [`scalar_loss`] for every weight and bias.
pub fn finite_difference_gradients(
    layers: &[Layer],
    xs: &[Vec<f64>],
    ys: &[usize],
    teacher: Option<(&[Layer], f64, f64)>,
    h: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut probe = layers.to_vec();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layers.len() {
        let mut gw = Vec::new();
        for i in 0..layers[l].weights.len() {
            let orig = probe[l].weights[i];
            probe[l].weights[i] = orig + h;
            let up = scalar_loss(&probe, xs, ys, teacher);
            probe[l].weights[i] = orig - h;
            let down = scalar_loss(&probe, xs, ys, teacher);
            probe[l].weights[i] = orig;
            gw.push((up - down) / (2.0 * h));
        }
        let mut gb = Vec::new();
        for i in 0..layers[l].bias.len() {
            let orig = probe[l].bias[i];
            probe[l].bias[i] = orig + h;
            let up = scalar_loss(&probe, xs, ys, teacher);
            probe[l].bias[i] = orig - h;
            let down = scalar_loss(&probe, xs, ys, teacher);
            probe[l].bias[i] = orig;
            gb.push((up - down) / (2.0 * h));
        }
        weights.push(gw);
        biases.push(gb);
    }
    (weights, biases)
}

/// Smallest |pre-activation| of any ReLU unit over the batch. Central
/// differences are only meaningful when this stays clear of the step size.
pub fn relu_margin(layers: &[Layer], xs: &[Vec<f64>]) -> f64 {
    let mut margin = f64::INFINITY;
    for x in xs {
        let mut input = x.clone();
        for layer in layers {
            let mut out = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let mut z = layer.bias[o];
                for i in 0..layer.inputs {
                    z += layer.weights[o * layer.inputs + i] * input[i];
                }
                if layer.activation == Activation::Relu {
                    margin = margin.min(z.abs());
                    z = z.max(0.0);
                }
                out.push(z);
            }
            input = out;
        }
    }
    margin
}

/// `|a - b| <= rel * max(|a|, |b|)`, or within `abs` near zero.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let diff = (a - b).abs();
    diff <= abs || diff <= rel * a.abs().max(b.abs())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
