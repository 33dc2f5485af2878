//! Monte-Carlo oracles and randomized properties.

use gaaf_core::activations::{gaf_eval, ActivationKind, GaafSpec, ShapeKind};
use gaaf_core::nn::{DenseLayer, DropoutLayer, Layer, Mode, Network};
use gaaf_core::probes::{
    dropout_net_variance_closed_form, net_variance_probe, saturation_histogram, HistogramSpec,
};
use gaaf_core::{Matrix, RngStream};
use proptest::prelude::*;

const K: f64 = 1e4;

#[test]
fn bernoulli_half_mean_over_three_seeds() {
    for seed in [1, 2, 3] {
        let mask = RngStream::new(seed).bernoulli_mask(0.5, 10_000).unwrap();
        let mean = mask.sum() / 10_000.0;
        assert!((0.47..=0.53).contains(&mean), "seed {seed}: mean {mean}");
    }
}

#[test]
fn drop_rate_within_three_sigma() {
    let n = 100_000;
    for p in [0.1, 0.3, 0.5, 0.9] {
        let mask = RngStream::new(41).bernoulli_mask(p, n).unwrap();
        let dropped = n as f64 - mask.sum();
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (dropped - n as f64 * p).abs() <= 3.0 * sigma,
            "p={p}: dropped {dropped}"
        );
    }
}

#[test]
fn gaussian_init_moments() {
    let m = RngStream::new(5).gaussian_init(100, 100, 1.0).unwrap();
    let mean = m.sum() / m.len() as f64;
    assert!(mean.abs() <= 0.05, "mean {mean}");
    let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.len() as f64;
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn sawtooth_contract_over_random_points() {
    let mut rng = RngStream::new(17);
    let spec = GaafSpec::with_defaults(ActivationKind::Tanh);
    for _ in 0..100_000 {
        let x = -10.0 + 20.0 * rng.uniform();
        let g = gaf_eval(x, K);
        assert!((-0.5 / K..0.5 / K).contains(&g), "g({x}) = {g}");
        assert!((gaf_eval(x + 1.0 / K, K) - g).abs() <= 1e-12);
        assert!((spec.forward(x) - ActivationKind::Tanh.eval(x)).abs() <= 0.5 / K);
    }
}

#[test]
fn sawtooth_slope_is_one_mid_tooth() {
    let h = 1.0 / (10.0 * K);
    for n in [-70_000i64, -3, 0, 12, 99_999] {
        let x = (n as f64 + 0.5) / K;
        let slope = (gaf_eval(x + h, K) - gaf_eval(x - h, K)) / (2.0 * h);
        assert!((slope - 1.0).abs() <= 1e-6, "x={x}: slope {slope}");
    }
}

#[test]
fn shapes_stay_in_the_unit_interval() {
    let shapes = [
        ShapeKind::gaussian_bump(1.5).unwrap(),
        ShapeKind::shifted_sigmoid(0.0, 1.0).unwrap(),
        ShapeKind::constant(0.7).unwrap(),
    ];
    let mut rng = RngStream::new(23);
    for shape in shapes {
        for _ in 0..100_000 {
            let x = 40.0 * (rng.uniform() - 0.5);
            let s = shape.eval(x);
            assert!((0.0..=1.0).contains(&s), "{shape:?} at {x}: {s}");
        }
    }
}

#[test]
fn dropout_expectation_matches_eval_scaling() {
    let x = Matrix::from_rows(&[vec![0.7, -1.3, 2.0, 0.25, 5.0]]).unwrap();
    for p in [0.2, 0.5] {
        let mut layer = DropoutLayer::new(p).unwrap();
        let mut rng = RngStream::new(31);
        let mut acc = Matrix::zeros(1, 5);
        let trials = 10_000;
        for _ in 0..trials {
            acc.add_assign(&layer.forward_train(&x, &mut rng).unwrap())
                .unwrap();
        }
        let eval = layer.forward_eval(&x).unwrap();
        for j in 0..5 {
            let mean = acc.get(0, j) / trials as f64;
            let target = eval.get(0, j);
            assert!(
                (mean - target).abs() <= 0.02 * target.abs(),
                "p={p} node {j}: {mean} vs {target}"
            );
        }
    }
}

fn single_layer(w: Matrix, p: f64) -> Network {
    let out = w.cols();
    Network::new(vec![
        Layer::Dropout(DropoutLayer::new(p).unwrap()),
        Layer::Dense(DenseLayer::from_params(w, Matrix::zeros(1, out)).unwrap()),
    ])
    .unwrap()
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs())
        .fold(0.0, f64::max)
}

#[test]
fn closed_form_matches_monte_carlo_over_many_masks() {
    let mut rng = RngStream::new(43);
    let w = rng.gaussian_init(5, 3, 1.0).unwrap();
    let x = rng.gaussian_init(1, 5, 1.0).unwrap();
    for p in [0.3, 0.5] {
        let net = single_layer(w.clone(), p);
        let mut mc_rng = RngStream::new(44);
        let probe = net_variance_probe(&net, &x, 100_000, &mut mc_rng, false).unwrap();
        let closed = dropout_net_variance_closed_form(&w, &x, p).unwrap();
        let gap = relative_gap(&probe[0].node_variance, &closed);
        assert!(gap < 0.03, "p={p}: relative gap {gap}");
    }
}

#[test]
fn variance_probe_converges_with_more_masks() {
    let mut rng = RngStream::new(47);
    let w = rng.gaussian_init(8, 4, 1.0).unwrap();
    let x = rng.gaussian_init(1, 8, 1.0).unwrap();
    let closed = dropout_net_variance_closed_form(&w, &x, 0.5).unwrap();
    let closed_mean = closed.iter().sum::<f64>() / closed.len() as f64;
    let net = single_layer(w, 0.5);

    // Average absolute error of the layer mean over independent repeats.
    let error_at = |m: usize| {
        let repeats = 20;
        (0..repeats)
            .map(|r| {
                let mut prng = RngStream::new(1000 + r);
                let rec = net_variance_probe(&net, &x, m, &mut prng, false).unwrap();
                (rec[0].mean_variance - closed_mean).abs()
            })
            .sum::<f64>()
            / repeats as f64
    };
    let errors: Vec<f64> = [20, 200, 2000].into_iter().map(error_at).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");

    let mut prng = RngStream::new(3);
    let rec = net_variance_probe(&net, &x, 1000, &mut prng, false).unwrap();
    assert!((rec[0].mean_variance - closed_mean).abs() <= 0.1 * closed_mean);
}

#[test]
fn variance_probe_of_two_unit_weights() {
    let w = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let net = single_layer(w, 0.5);
    let rec = net_variance_probe(&net, &x, 20_000, &mut RngStream::new(8), false).unwrap();
    assert!(
        (rec[0].mean_variance - 0.5).abs() < 0.02,
        "{}",
        rec[0].mean_variance
    );
}

#[test]
fn variance_probe_with_zero_drop_rate_is_zero() {
    let mut rng = RngStream::new(49);
    let net = single_layer(rng.gaussian_init(4, 2, 1.0).unwrap(), 0.0);
    let x = rng.gaussian_init(3, 4, 1.0).unwrap();
    let rec = net_variance_probe(&net, &x, 20, &mut rng, false).unwrap();
    assert!(rec.iter().all(|r| r.mean_variance == 0.0));
}

#[test]
fn eval_forward_is_bit_identical_across_calls() {
    let mut rng = RngStream::new(50);
    let mut net = single_layer(rng.gaussian_init(6, 3, 1.0).unwrap(), 0.5);
    let x = rng.gaussian_init(4, 6, 1.0).unwrap();
    let a = net.forward(&x, Mode::Eval, &mut rng).unwrap();
    let b = net.forward(&x, Mode::Eval, &mut rng).unwrap();
    assert_eq!(a, b);
}

fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(m, k, l, n)| {
            (small_matrix(m, k), small_matrix(k, l), small_matrix(l, n))
        })
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-9);
    }

    #[test]
    fn blocked_product_matches_reference(
        (a, b) in (1usize..20, 1usize..20, 1usize..20).prop_flat_map(|(m, k, n)| {
            (small_matrix(m, k), small_matrix(k, n))
        })
    ) {
        let fast = a.matmul(&b).unwrap();
        let slow = a.matmul_reference(&b).unwrap();
        prop_assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12);
    }

    #[test]
    fn sawtooth_is_periodic_for_any_frequency(x in -100.0f64..100.0, k in 1.0f64..1e5) {
        let g = gaf_eval(x, k);
        prop_assert!(g >= -0.5 / k && g < 0.5 / k);
        // Only rounding of x·k and x + 1/k separates the two evaluations.
        prop_assert!((gaf_eval(x + 1.0 / k, k) - g).abs() <= 8.0 * f64::EPSILON * (x.abs() + 1.0));
    }

    #[test]
    fn histogram_ignores_order_and_conserves_mass(
        mut values in prop::collection::vec(-8.0f64..8.0, 1..300),
        seed in any::<u64>(),
    ) {
        let spec = HistogramSpec::default();
        let a = saturation_histogram(&Matrix::new(1, values.len(), values.clone()).unwrap(), spec).unwrap();
        RngStream::new(seed).shuffle(&mut values);
        let b = saturation_histogram(&Matrix::new(1, values.len(), values.clone()).unwrap(), spec).unwrap();
        prop_assert_eq!(&a.counts, &b.counts);
        let binned: u64 = a.counts.iter().sum();
        prop_assert_eq!(binned + a.underflow + a.overflow, values.len() as u64);
    }

    #[test]
    fn shuffle_is_a_permutation(n in 0usize..500, seed in any::<u64>()) {
        let mut v: Vec<usize> = (0..n).collect();
        RngStream::new(seed).shuffle(&mut v);
        v.sort_unstable();
        prop_assert_eq!(v, (0..n).collect::<Vec<_>>());
    }
}
