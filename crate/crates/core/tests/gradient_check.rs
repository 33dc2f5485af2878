//! Analytic backward passes against central finite differences.

use gaaf_core::activations::{Activation, ActivationKind, GaafSpec, ShapeKind};
use gaaf_core::nn::{
    ActivationLayer, BatchNormLayer, DenseLayer, DropoutLayer, Layer, Mode, Network,
};
use gaaf_core::train::softmax_cross_entropy;
use gaaf_core::{Matrix, RngStream};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

fn loss(net: &Network, x: &Matrix, labels: &[usize]) -> f64 {
    let mut probe = net.clone();
    let mut rng = RngStream::new(0);
    let out = probe.forward(x, Mode::Train, &mut rng).unwrap();
    softmax_cross_entropy(&out, labels).unwrap().0
}

/// Compares every parameter gradient and the input gradient of `net`.
/// Returns the largest relative error seen.
fn check_network(net: &Network, x: &Matrix, labels: &[usize]) -> f64 {
    let mut work = net.clone();
    let mut rng = RngStream::new(0);
    work.zero_grads();
    let out = work.forward(x, Mode::Train, &mut rng).unwrap();
    let (_, grad) = softmax_cross_entropy(&out, labels).unwrap();
    let grad_in = work.backward(&grad).unwrap();

    let analytic: Vec<Vec<f64>> = work
        .params_mut()
        .into_iter()
        .map(|s| s.grad.as_slice().to_vec())
        .collect();
    let mut worst: f64 = 0.0;
    for (slot, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let perturbed = |delta: f64| {
                let mut n = net.clone();
                let mut slots = n.params_mut();
                *slots[slot].param = bumped(slots[slot].param, i, delta);
                drop(slots);
                loss(&n, x, labels)
            };
            let numeric = (perturbed(H) - perturbed(-H)) / (2.0 * H);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    for i in 0..x.len() {
        let shifted = |delta: f64| loss(net, &bumped(x, i, delta), labels);
        let numeric = (shifted(H) - shifted(-H)) / (2.0 * H);
        worst = worst.max(rel_err(grad_in.as_slice()[i], numeric));
    }
    worst
}

fn bumped(m: &Matrix, i: usize, delta: f64) -> Matrix {
    let (r, c) = m.shape();
    let mut data = m.clone().into_vec();
    data[i] += delta;
    Matrix::new(r, c, data).unwrap()
}

fn dense(rng: &mut RngStream, i: usize, o: usize) -> Layer {
    let w = rng.gaussian_init(i, o, 0.8).unwrap();
    let b = rng.gaussian_init(1, o, 0.3).unwrap();
    Layer::Dense(DenseLayer::from_params(w, b).unwrap())
}

fn act(kind: ActivationKind) -> Layer {
    Layer::Activation(ActivationLayer::new(Activation::Plain(kind)))
}

fn toy_input(seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = RngStream::new(seed);
    (rng.gaussian_init(5, 4, 1.0).unwrap(), vec![0, 2, 1, 2, 0])
}

#[test]
fn dense_and_softmax_cross_entropy() {
    let mut rng = RngStream::new(1);
    let net = Network::new(vec![dense(&mut rng, 4, 6), dense(&mut rng, 6, 3)]).unwrap();
    let (x, y) = toy_input(2);
    let worst = check_network(&net, &x, &y);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn smooth_activations() {
    for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid] {
        let mut rng = RngStream::new(3);
        let net = Network::new(vec![
            dense(&mut rng, 4, 6),
            act(kind),
            dense(&mut rng, 6, 3),
        ])
        .unwrap();
        let (x, y) = toy_input(4);
        let worst = check_network(&net, &x, &y);
        assert!(worst < TOL, "{kind:?}: worst relative error {worst}");
    }
}

#[test]
fn relu_away_from_the_kink() {
    let mut rng = RngStream::new(5);
    let net = Network::new(vec![
        dense(&mut rng, 4, 6),
        act(ActivationKind::Relu),
        dense(&mut rng, 6, 3),
    ])
    .unwrap();
    let (x, y) = toy_input(6);
    let nets = net.forward_eval_recording(&x).unwrap().nets;
    let closest = nets[0]
        .as_slice()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    assert!(
        closest > 10.0 * H,
        "a ReLU input sits within {closest} of 0"
    );
    let worst = check_network(&net, &x, &y);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn dropout_with_a_frozen_mask() {
    let mut rng = RngStream::new(7);
    let mut drop = DropoutLayer::new(0.5).unwrap();
    drop.pin_mask(Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]]).unwrap())
        .unwrap();
    let net = Network::new(vec![
        dense(&mut rng, 4, 6),
        act(ActivationKind::Tanh),
        Layer::Dropout(drop),
        dense(&mut rng, 6, 3),
    ])
    .unwrap();
    let (x, y) = toy_input(8);
    let worst = check_network(&net, &x, &y);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn batchnorm_with_frozen_statistics() {
    let mut rng = RngStream::new(9);
    let mut bn = BatchNormLayer::from_parts(
        rng.gaussian_init(1, 6, 1.0).unwrap(),
        rng.gaussian_init(1, 6, 1.0).unwrap(),
        rng.gaussian_init(1, 6, 1.0).unwrap(),
        Matrix::filled(1, 6, 2.5).unwrap(),
        1e-5,
        0.9,
    )
    .unwrap();
    bn.freeze_statistics(true);
    let net = Network::new(vec![
        dense(&mut rng, 4, 6),
        Layer::BatchNorm(bn),
        act(ActivationKind::Tanh),
        dense(&mut rng, 6, 3),
    ])
    .unwrap();
    let (x, y) = toy_input(10);
    let worst = check_network(&net, &x, &y);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn batchnorm_with_batch_statistics() {
    let mut rng = RngStream::new(11);
    let mut bn = BatchNormLayer::new(6);
    bn.set_gamma_beta(
        rng.gaussian_init(1, 6, 1.0).unwrap(),
        rng.gaussian_init(1, 6, 1.0).unwrap(),
    )
    .unwrap();
    let net = Network::new(vec![
        dense(&mut rng, 4, 6),
        Layer::BatchNorm(bn),
        act(ActivationKind::Tanh),
        dense(&mut rng, 6, 3),
    ])
    .unwrap();
    let (x, y) = toy_input(12);
    let worst = check_network(&net, &x, &y);
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn softmax_cross_entropy_logit_gradient() {
    let mut rng = RngStream::new(13);
    let logits = rng.gaussian_init(4, 7, 2.0).unwrap();
    let labels = [6, 0, 3, 3];
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    for i in 0..logits.len() {
        let at = |delta: f64| {
            softmax_cross_entropy(&bumped(&logits, i, delta), &labels)
                .unwrap()
                .0
        };
        let numeric = (at(H) - at(-H)) / (2.0 * H);
        let err = rel_err(grad.as_slice()[i], numeric);
        assert!(err < 1e-6, "entry {i}: relative error {err}");
    }
}

#[test]
fn gaaf_backward_is_the_defined_surrogate() {
    let shapes = [
        (ActivationKind::Tanh, ShapeKind::gaussian_bump(1.5).unwrap()),
        (
            ActivationKind::Relu,
            ShapeKind::shifted_sigmoid(0.0, 1.0).unwrap(),
        ),
        (ActivationKind::Sigmoid, ShapeKind::constant(0.3).unwrap()),
    ];
    let mut rng = RngStream::new(14);
    for (base, shape) in shapes {
        let spec = GaafSpec::new(base, 1e4, shape).unwrap();
        let mut layer = ActivationLayer::new(Activation::Gaaf(spec));
        let x = rng.gaussian_init(8, 5, 3.0).unwrap();
        let g = rng.gaussian_init(8, 5, 1.0).unwrap();
        layer.forward_train(&x).unwrap();
        let back = layer.backward(&g).unwrap();
        for i in 0..x.len() {
            let xi = x.as_slice()[i];
            let expected = g.as_slice()[i] * (base.deriv(xi) + shape.eval(xi));
            assert_eq!(back.as_slice()[i], expected);
        }
    }
}
