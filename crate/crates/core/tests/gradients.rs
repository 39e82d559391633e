mod common;

use common::{close, finite_difference_gradients, relu_margin, scalar_loss};
use rand::Rng;
use randprune::mask::BitMask;
use randprune::nn::{
    backward, forward, forward_distilled, optimizer_step, Activation, KdConfig, Layer,
    MaskedNetwork, Matrix, Network, OptimizerState,
};
use randprune::rng::stream;

/// Random batch whose ReLU inputs all stay at least 1e-3 from the kink, so
/// an h = 1e-4 probe never crosses it. Redraws until that holds.
fn random_batch(rng: &mut impl Rng, net: &Network, rows: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let (cols, classes) = (net.input_dim(), net.output_dim());
    loop {
        let xs: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        if relu_margin(net.layers(), &xs) > 1e-3 {
            return (xs, ys);
        }
    }
}

/// Fresh network with non-zero biases, so no unit sits exactly on a ReLU kink.
fn random_network(widths: &[usize], rng: &mut randprune::rng::SeededRng) -> Network {
    let init = Network::init(widths, Activation::Relu, rng).unwrap();
    let layers = init
        .layers()
        .iter()
        .map(|l| {
            let bias = (0..l.outputs)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect();
            Layer::new(l.inputs, l.outputs, l.weights.clone(), bias, l.activation).unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

fn check_against_fd(
    net: &MaskedNetwork,
    grads: &randprune::nn::Gradients,
    fd: &(Vec<Vec<f64>>, Vec<Vec<f64>>),
) {
    for l in 0..grads.weights.len() {
        for (i, (&a, &n)) in grads.weights[l].iter().zip(&fd.0[l]).enumerate() {
            if net.masks()[l].get(i) {
                assert!(
                    close(a, n, 1e-4, 1e-8),
                    "layer {l} weight {i}: analytic {a} vs fd {n}"
                );
            } else {
                assert_eq!(a, 0.0);
            }
        }
        for (i, (&a, &n)) in grads.biases[l].iter().zip(&fd.1[l]).enumerate() {
            assert!(
                close(a, n, 1e-4, 1e-8),
                "layer {l} bias {i}: analytic {a} vs fd {n}"
            );
        }
    }
}

#[test]
fn hand_set_network_loss_matches_scalar_oracle() {
    let l0 = Layer::new(
        2,
        4,
        vec![0.5, -0.25, 1.0, 0.75, -0.5, 0.3, 0.2, -1.1],
        vec![0.1, 0.0, -0.2, 0.05],
        Activation::Relu,
    )
    .unwrap();
    let l1 = Layer::new(
        4,
        2,
        vec![1.0, -0.5, 0.25, 0.8, -0.3, 0.6, -0.9, 0.4],
        vec![0.0, 0.1],
        Activation::Identity,
    )
    .unwrap();
    let layers = vec![l0, l1];
    let net = MaskedNetwork::dense(Network::new(layers.clone()).unwrap());
    let xs = vec![vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.0, -1.5]];
    let ys = vec![0, 1, 1];
    let cache = forward(&net, &Matrix::from_rows(&xs).unwrap(), &ys).unwrap();
    let expected = scalar_loss(&layers, &xs, &ys, None);
    assert!(
        (cache.loss - expected).abs() < 1e-12,
        "{} vs {expected}",
        cache.loss
    );
}

#[test]
fn random_networks_match_finite_differences() {
    let mut rng = stream(2024, &[]);
    for trial in 0..20 {
        let widths = [
            rng.random_range(2..5),
            rng.random_range(3..9),
            rng.random_range(2..7),
            rng.random_range(2..4),
        ];
        let net = random_network(&widths, &mut rng);
        let params: usize = net
            .layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        assert!(params <= 200, "trial {trial} has {params} parameters");
        let net = MaskedNetwork::dense(net);
        let (xs, ys) = random_batch(&mut rng, net.network(), 4);
        let cache = forward(&net, &Matrix::from_rows(&xs).unwrap(), &ys).unwrap();
        let grads = backward(&net, &cache).unwrap();
        let fd = finite_difference_gradients(net.network().layers(), &xs, &ys, None, 1e-4);
        check_against_fd(&net, &grads, &fd);
    }
}

#[test]
fn two_eight_two_matches_finite_differences() {
    let mut rng = stream(7, &[]);
    let net = MaskedNetwork::dense(random_network(&[2, 8, 2], &mut rng));
    let (xs, ys) = random_batch(&mut rng, net.network(), 4);
    let cache = forward(&net, &Matrix::from_rows(&xs).unwrap(), &ys).unwrap();
    let grads = backward(&net, &cache).unwrap();
    let fd = finite_difference_gradients(net.network().layers(), &xs, &ys, None, 1e-4);
    check_against_fd(&net, &grads, &fd);
}

#[test]
fn masked_and_distilled_gradients_match_finite_differences() {
    let mut rng = stream(99, &[]);
    for _ in 0..5 {
        let widths = [3, 6, 5, 3];
        let teacher = random_network(&widths, &mut rng);
        let student = random_network(&widths, &mut rng);
        let masks: Vec<BitMask> = student
            .layers()
            .iter()
            .map(|l| {
                BitMask::from_bits((0..l.weights.len()).map(|_| rng.random_bool(0.6)).collect())
            })
            .collect();
        let net = MaskedNetwork::with_masks(student, masks).unwrap();
        let kd = KdConfig {
            enabled: true,
            alpha_hidden: 0.7,
            alpha_output: 1.3,
        };
        let (xs, ys) = random_batch(&mut rng, net.network(), 5);
        let cache =
            forward_distilled(&net, &Matrix::from_rows(&xs).unwrap(), &ys, &teacher, &kd).unwrap();
        let oracle = Some((teacher.layers(), kd.alpha_hidden, kd.alpha_output));
        assert!((cache.loss - scalar_loss(net.network().layers(), &xs, &ys, oracle)).abs() < 1e-12);
        let grads = backward(&net, &cache).unwrap();
        let fd = finite_difference_gradients(net.network().layers(), &xs, &ys, oracle, 1e-4);
        check_against_fd(&net, &grads, &fd);
    }
}

#[test]
fn quadratic_surrogate_converges_to_zero_gradient() {
    // One output class makes cross-entropy identically zero, leaving the
    // logit-matching term: alpha * (w x - t x)^2, minimized at w = t.
    let teacher = Network::new(vec![Layer::new(
        1,
        1,
        vec![0.8],
        vec![0.0],
        Activation::Identity,
    )
    .unwrap()])
    .unwrap();
    let student = Layer::new(1, 1, vec![-0.3], vec![0.0], Activation::Identity).unwrap();
    let mut net = MaskedNetwork::dense(Network::new(vec![student]).unwrap());
    let mut opt = OptimizerState::sgd(0.2);
    let kd = KdConfig {
        enabled: true,
        alpha_hidden: 0.0,
        alpha_output: 1.0,
    };
    let x = Matrix::from_rows(&[vec![1.5]]).unwrap();
    let mut grad = f64::INFINITY;
    for _ in 0..500 {
        let cache = forward_distilled(&net, &x, &[0], &teacher, &kd).unwrap();
        let g = backward(&net, &cache).unwrap();
        grad = g.weights[0][0].abs().max(g.biases[0][0].abs());
        optimizer_step(&mut net, &g, &mut opt).unwrap();
    }
    assert!(grad < 1e-8, "gradient {grad}");
}
