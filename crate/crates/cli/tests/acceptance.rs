//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 4 to 9 need the MNIST IDX files, looked up in `$MNIST_DIR` and
//! then in `<workspace>/data/mnist`. `GAAF_ACCEPTANCE_SKIP_MNIST=1` skips
//! them (they are then reported as FAIL, not run). The process exits 0
//! regardless of outcomes unless `GAAF_ACCEPTANCE_STRICT=1` is set.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gaaf_cli::experiment::run_seed;
use gaaf_cli::reproduce::{
    reproduce_mnist, variant_config, ReproduceOptions, ReproduceSummary, Variant,
};
use gaaf_core::activations::{gaf_eval, Activation, ActivationKind, GaafSpec, ShapeKind};
use gaaf_core::nn::{
    ActivationLayer, BatchNormLayer, DenseLayer, DropoutLayer, Layer, Mode, Network,
};
use gaaf_core::probes::{dropout_net_variance_closed_form, net_variance_probe};
use gaaf_core::train::softmax_cross_entropy;
use gaaf_core::{Matrix, RngStream};

const K: f64 = 1e4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> (bool, String) {
    let ok = elapsed.as_secs_f64() < limit_secs as f64;
    (
        ok,
        format!("{:.1}s (limit {limit_secs}s)", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 1

fn sawtooth_contract() -> Outcome {
    let started = Instant::now();
    let spec = GaafSpec::with_defaults(ActivationKind::Tanh);
    let mut rng = RngStream::new(2024);
    let mut worst_amp: f64 = 0.0;
    let mut worst_period: f64 = 0.0;
    let mut worst_close: f64 = 0.0;
    let mut worst_slope: f64 = 0.0;
    // Forward difference from the middle of the tooth holding x.
    let h = 0.1 / K;
    for _ in 0..100_000 {
        let x = -10.0 + 20.0 * rng.uniform();
        let g = gaf_eval(x, K);
        worst_amp = worst_amp.max(g.abs());
        worst_period = worst_period.max((gaf_eval(x + 1.0 / K, K) - g).abs());
        worst_close = worst_close.max((spec.forward(x) - ActivationKind::Tanh.eval(x)).abs());
        let mid = ((x * K).floor() + 0.5) / K;
        let slope = (gaf_eval(mid + h, K) - gaf_eval(mid, K)) / h;
        worst_slope = worst_slope.max((slope - 1.0).abs());
    }
    let (fast, time) = within(started.elapsed(), 1);
    let pass = worst_amp <= 0.5 / K
        && worst_period <= 1e-12
        && worst_slope <= 1e-6
        && worst_close <= 0.5 / K
        && fast;
    outcome(
        pass,
        format!(
            "max|g| {worst_amp:.3e}, max period gap {worst_period:.1e}, max slope error {worst_slope:.1e}, \
             max|gaaf-tanh| {worst_close:.3e}, {time}"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn loss_of(net: &Network, x: &Matrix, labels: &[usize]) -> f64 {
    let mut probe = net.clone();
    let out = probe
        .forward(x, Mode::Train, &mut RngStream::new(0))
        .unwrap();
    softmax_cross_entropy(&out, labels).unwrap().0
}

fn bumped(m: &Matrix, i: usize, delta: f64) -> Matrix {
    let (r, c) = m.shape();
    let mut v = m.clone().into_vec();
    v[i] += delta;
    Matrix::new(r, c, v).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

/// Worst relative error between backprop and central differences over all
/// parameters and inputs.
fn worst_gradient_error(net: &Network, x: &Matrix, labels: &[usize]) -> f64 {
    const H: f64 = 1e-5;
    let mut work = net.clone();
    work.zero_grads();
    let out = work
        .forward(x, Mode::Train, &mut RngStream::new(0))
        .unwrap();
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
            let at = |d: f64| {
                let mut n = net.clone();
                let mut slots = n.params_mut();
                *slots[slot].param = bumped(slots[slot].param, i, d);
                drop(slots);
                loss_of(&n, x, labels)
            };
            worst = worst.max(rel_err(a, (at(H) - at(-H)) / (2.0 * H)));
        }
    }
    for i in 0..x.len() {
        let at = |d: f64| loss_of(net, &bumped(x, i, d), labels);
        worst = worst.max(rel_err(grad_in.as_slice()[i], (at(H) - at(-H)) / (2.0 * H)));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let started = Instant::now();
    let dense = |rng: &mut RngStream, i, o| {
        Layer::Dense(
            DenseLayer::from_params(
                rng.gaussian_init(i, o, 0.8).unwrap(),
                rng.gaussian_init(1, o, 0.3).unwrap(),
            )
            .unwrap(),
        )
    };
    let act = |k| Layer::Activation(ActivationLayer::new(Activation::Plain(k)));
    let mut rng = RngStream::new(99);
    let x = rng.gaussian_init(5, 4, 1.0).unwrap();
    let labels = [0, 2, 1, 2, 0];
    let mut errors = Vec::new();

    for (i, kind) in [
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Relu,
    ]
    .into_iter()
    .enumerate()
    {
        let mut r = RngStream::new(100 + i as u64);
        let net = Network::new(vec![dense(&mut r, 4, 6), act(kind), dense(&mut r, 6, 3)]).unwrap();
        if kind == ActivationKind::Relu {
            let nets = net.forward_eval_recording(&x).unwrap().nets;
            let closest = nets[0]
                .as_slice()
                .iter()
                .fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if closest <= 1e-4 {
                return outcome(false, format!("ReLU input within {closest} of the kink"));
            }
        }
        errors.push((format!("{kind:?}"), worst_gradient_error(&net, &x, &labels)));
    }

    let mut drop = DropoutLayer::new(0.5).unwrap();
    drop.pin_mask(Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]]).unwrap())
        .unwrap();
    let mut r = RngStream::new(110);
    let net = Network::new(vec![
        dense(&mut r, 4, 6),
        act(ActivationKind::Tanh),
        Layer::Dropout(drop),
        dense(&mut r, 6, 3),
    ])
    .unwrap();
    errors.push(("dropout".into(), worst_gradient_error(&net, &x, &labels)));

    let mut r = RngStream::new(111);
    let mut bn = BatchNormLayer::from_parts(
        r.gaussian_init(1, 6, 1.0).unwrap(),
        r.gaussian_init(1, 6, 1.0).unwrap(),
        r.gaussian_init(1, 6, 1.0).unwrap(),
        Matrix::filled(1, 6, 2.5).unwrap(),
        1e-5,
        0.9,
    )
    .unwrap();
    bn.freeze_statistics(true);
    let net = Network::new(vec![
        dense(&mut r, 4, 6),
        Layer::BatchNorm(bn),
        act(ActivationKind::Tanh),
        dense(&mut r, 6, 3),
    ])
    .unwrap();
    errors.push(("batchnorm".into(), worst_gradient_error(&net, &x, &labels)));

    let mut gaaf_exact = true;
    for (base, shape) in [
        (ActivationKind::Tanh, ShapeKind::gaussian_bump(1.5).unwrap()),
        (
            ActivationKind::Relu,
            ShapeKind::shifted_sigmoid(0.0, 1.0).unwrap(),
        ),
    ] {
        let mut layer =
            ActivationLayer::new(Activation::Gaaf(GaafSpec::new(base, K, shape).unwrap()));
        let z = rng.gaussian_init(8, 5, 3.0).unwrap();
        let g = rng.gaussian_init(8, 5, 1.0).unwrap();
        layer.forward_train(&z).unwrap();
        let back = layer.backward(&g).unwrap();
        for i in 0..z.len() {
            let zi = z.as_slice()[i];
            gaaf_exact &= back.as_slice()[i] == g.as_slice()[i] * (base.deriv(zi) + shape.eval(zi));
        }
    }

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let (fast, time) = within(started.elapsed(), 10);
    let listed: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst < 1e-4 && gaaf_exact && fast,
        format!(
            "worst relative error {worst:.2e} [{}], GAAF surrogate exact: {gaaf_exact}, {time}",
            listed.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 3

fn dropout_variance() -> Outcome {
    let started = Instant::now();
    let mut rng = RngStream::new(303);
    let w = rng.gaussian_init(5, 3, 1.0).unwrap();
    let x = rng.gaussian_init(1, 5, 1.0).unwrap();
    let mut gaps = Vec::new();
    for p in [0.3, 0.5] {
        let net = Network::new(vec![
            Layer::Dropout(DropoutLayer::new(p).unwrap()),
            Layer::Dense(DenseLayer::from_params(w.clone(), Matrix::zeros(1, 3)).unwrap()),
        ])
        .unwrap();
        let probe = net_variance_probe(&net, &x, 100_000, &mut RngStream::new(304), false).unwrap();
        let closed = dropout_net_variance_closed_form(&w, &x, p).unwrap();
        let gap = probe[0]
            .node_variance
            .iter()
            .zip(&closed)
            .map(|(e, c)| (e - c).abs() / c)
            .fold(0.0, f64::max);
        gaps.push((p, gap));
    }
    let (fast, time) = within(started.elapsed(), 30);
    let pass = gaps.iter().all(|&(_, g)| g < 0.03) && fast;
    let listed: Vec<String> = gaps
        .iter()
        .map(|(p, g)| format!("p={p}: {:.2}%", 100.0 * g))
        .collect();
    outcome(
        pass,
        format!("worst per-node relative gap {}, {time}", listed.join(", ")),
    )
}

// ---------------------------------------------------------------- 4

fn gradient_amplification(mnist: &Path) -> Outcome {
    let started = Instant::now();
    let opts = ReproduceOptions {
        max_epochs: 1,
        train_limit: Some(10_000),
        ..ReproduceOptions::default()
    };
    let corpus =
        match gaaf_cli::experiment::load_corpus(&variant_config(Variant::Base, mnist, &opts), None)
        {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("cannot load MNIST: {e}")),
        };
    let mut ratios = Vec::new();
    for seed in [1, 2, 3] {
        let g = |variant| -> Vec<f64> {
            let cfg = variant_config(variant, mnist, &opts);
            let run = run_seed(&cfg, &corpus, seed).expect("one-epoch run");
            run.outcome.log.rows()[0].grad_info.clone()
        };
        let base = g(Variant::Base);
        let dropout = g(Variant::Dropout);
        ratios.push(
            dropout[..3]
                .iter()
                .zip(&base[..3])
                .map(|(d, b)| d / b)
                .collect::<Vec<f64>>(),
        );
    }
    let (fast, time) = within(started.elapsed(), 600);
    let pass = ratios.iter().flatten().all(|&r| r > 2.0) && fast;
    let listed: Vec<String> = ratios
        .iter()
        .zip(1..)
        .map(|(r, s)| format!("seed {s}: {:.2}/{:.2}/{:.2}", r[0], r[1], r[2]))
        .collect();
    outcome(
        pass,
        format!(
            "dropout/base G ratio, hidden layers 1/2/3, need > 2: {}; {time}",
            listed.join("; ")
        ),
    )
}

// ---------------------------------------------------------------- 5 to 9

struct Campaign {
    summary: ReproduceSummary,
    main_elapsed: Duration,
}

fn run_campaign(mnist: &Path, out: &Path) -> Result<Campaign, String> {
    let main = ReproduceOptions {
        variants: vec![Variant::Base, Variant::Dropout, Variant::Gaaf],
        ..campaign_options()
    };
    let started = Instant::now();
    let mut summary =
        reproduce_mnist(mnist, &out.join("main"), &main).map_err(|e| e.to_string())?;
    let main_elapsed = started.elapsed();
    let bn = ReproduceOptions {
        variants: vec![Variant::Bn, Variant::BnGaaf],
        ..campaign_options()
    };
    let bn_summary =
        reproduce_mnist(mnist, &out.join("batchnorm"), &bn).map_err(|e| e.to_string())?;
    summary.accuracy_table.extend(bn_summary.accuracy_table);
    summary.reports.extend(bn_summary.reports);
    summary.saturation.extend(bn_summary.saturation);
    summary.batchnorm_gaaf_gain_points = bn_summary.batchnorm_gaaf_gain_points;
    Ok(Campaign {
        summary,
        main_elapsed,
    })
}

fn campaign_options() -> ReproduceOptions {
    ReproduceOptions {
        max_epochs: 100,
        ..ReproduceOptions::default()
    }
}

fn report(s: &ReproduceSummary, v: Variant) -> &gaaf_cli::report::RunReport {
    &s.reports[&v]
}

fn accuracy_ordering(c: &Campaign) -> Outcome {
    let s = &c.summary;
    let base = report(s, Variant::Base);
    let seed_accs: Vec<f64> = base.runs.iter().map(|r| 100.0 * r.test_accuracy).collect();
    let b = 100.0 * base.test_accuracy.mean;
    let g = 100.0 * report(s, Variant::Gaaf).test_accuracy.mean;
    let d = 100.0 * report(s, Variant::Dropout).test_accuracy.mean;
    let (fast, time) = within(c.main_elapsed, 3600);
    let floor = seed_accs.iter().all(|&a| a >= 97.5);
    outcome(
        floor && g >= b - 0.1 && d >= b - 0.1 && fast,
        format!(
            "base per seed {:?}%, means base {b:.2}% / gaaf {g:.2}% / dropout {d:.2}%, campaign {time}",
            seed_accs.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>()
        ),
    )
}

fn convergence(c: &Campaign) -> Outcome {
    let s = &c.summary;
    let g = report(s, Variant::Gaaf).epochs_to_converge.mean;
    let d = report(s, Variant::Dropout).epochs_to_converge.mean;
    let b = report(s, Variant::Base).epochs_to_converge.mean;
    outcome(
        g <= d,
        format!("mean epochs to converge: gaaf {g:.1}, dropout {d:.1} (base {b:.1})"),
    )
}

fn saturation_push(c: &Campaign) -> Outcome {
    let s = &c.summary;
    let frac = |v: Variant| &s.saturation[&v].fraction;
    let (b, d, g) = (
        frac(Variant::Base),
        frac(Variant::Dropout),
        frac(Variant::Gaaf),
    );
    // Probe points are the three hidden activations, then the logits.
    let deep = 2;
    let pass = d[deep] > b[deep] && g[deep] > b[deep] && d[deep] > d[0];
    let fmt = |v: &Vec<f64>| format!("{:.3}/{:.3}/{:.3}", v[0], v[1], v[2]);
    outcome(
        pass,
        format!(
            "fraction |z|>2 on hidden layers 1/2/3: base {}, dropout {}, gaaf {}",
            fmt(b),
            fmt(d),
            fmt(g)
        ),
    )
}

fn net_variance(c: &Campaign) -> Outcome {
    let Some(v) = &c.summary.net_variance else {
        return outcome(false, "no variance record in the campaign summary");
    };
    let m = &v.mean_variance;
    let pass = m[0] == 0.0 && m[1..].iter().all(|&x| (0.1..=10.0).contains(&x));
    let listed: Vec<String> = v
        .points
        .iter()
        .zip(m)
        .map(|(p, x)| format!("{p} {x:.3}"))
        .collect();
    outcome(
        pass,
        format!(
            "seed {}, {} masks over {} test images: {}",
            v.seed,
            v.masks,
            v.batch,
            listed.join(", ")
        ),
    )
}

fn batchnorm(c: &Campaign) -> Outcome {
    let s = &c.summary;
    let bn = 100.0 * report(s, Variant::Bn).test_accuracy.mean;
    let bg = 100.0 * report(s, Variant::BnGaaf).test_accuracy.mean;
    outcome(
        bg >= bn - 0.2,
        format!(
            "mean test accuracy bn {bn:.2}%, bn+gaaf {bg:.2}% (difference {:+.2} points)",
            bg - bn
        ),
    )
}

// ---------------------------------------------------------------- 10

fn determinism(scratch: &Path) -> Outcome {
    let cfg = scratch.join("determinism.toml");
    let text = "schema = 1\n[dataset]\nkind = \"synthetic\"\nn = 400\ntest_n = 100\nclasses = 4\ndim = 8\nseed = 5\n\
                [model]\nhidden = [16, 16]\ndropout = 0.5\n[model.gaaf]\n\
                [training]\nbatch_size = 32\nmax_epochs = 6\nseeds = [11]\n[probes]\ngrad_info_every = 1\ngrad_info_samples = 16\n";
    if let Err(e) = std::fs::write(&cfg, text) {
        return outcome(false, format!("cannot write config: {e}"));
    }
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = scratch.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_gaaf"))
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        std::fs::read(out.join("seed-11/metrics.csv")).map_err(|e| e.to_string())
    };
    match (run("first"), run("second")) {
        (Ok(a), Ok(b)) => outcome(
            a == b,
            format!(
                "two runs, {} vs {} bytes, identical: {}",
                a.len(),
                b.len(),
                a == b
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("train failed: {e}")),
    }
}

// ----------------------------------------------------------------

fn mnist_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain(std::iter::once(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
        ));
    candidates.into_iter().find(|dir| {
        gaaf_core::data::find_mnist_files(dir, gaaf_core::data::MnistSplit::Train).is_ok()
            && gaaf_core::data::find_mnist_files(dir, gaaf_core::data::MnistSplit::Test).is_ok()
    })
}

fn main() {
    // Ignore libtest flags such as --nocapture passed through by cargo.
    let strict = std::env::var("GAAF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let skip_mnist = std::env::var("GAAF_ACCEPTANCE_SKIP_MNIST").is_ok_and(|v| v == "1");
    let scratch = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "sawtooth contract", sawtooth_contract()),
        (2, "gradient checks", gradient_checks()),
        (3, "dropout net variance vs closed form", dropout_variance()),
    ];

    let mnist_names = [
        (4, "gradient-information amplification"),
        (5, "accuracy ordering"),
        (6, "convergence speed"),
        (7, "saturation push"),
        (8, "net-variance probe"),
        (9, "GAAF with batch normalization"),
    ];
    match (skip_mnist, mnist_dir()) {
        (true, _) => {
            for (id, name) in mnist_names {
                results.push((
                    id,
                    name,
                    outcome(false, "not run: GAAF_ACCEPTANCE_SKIP_MNIST=1"),
                ));
            }
        }
        (false, None) => {
            for (id, name) in mnist_names {
                results.push((
                    id,
                    name,
                    outcome(false, "not run: MNIST data not found (set MNIST_DIR)"),
                ));
            }
        }
        (false, Some(dir)) => {
            results.push((4, mnist_names[0].1, gradient_amplification(&dir)));
            let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-campaign");
            match run_campaign(&dir, &out) {
                Ok(c) => {
                    results.push((5, mnist_names[1].1, accuracy_ordering(&c)));
                    results.push((6, mnist_names[2].1, convergence(&c)));
                    results.push((7, mnist_names[3].1, saturation_push(&c)));
                    results.push((8, mnist_names[4].1, net_variance(&c)));
                    results.push((9, mnist_names[5].1, batchnorm(&c)));
                    if let Some(r) = &c.summary.gradient_ratio_whole_training {
                        eprintln!(
                            "note: campaign dropout/base G ratio averaged over all epochs: {:?}",
                            r.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>()
                        );
                    }
                    eprintln!("note: campaign outputs in {}", out.display());
                }
                Err(e) => {
                    for &(id, name) in &mnist_names[1..] {
                        results.push((id, name, outcome(false, format!("campaign failed: {e}"))));
                    }
                }
            }
        }
    }
    results.push((10, "determinism", determinism(scratch.path())));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{tag} [{id:>2}] {name}: {}", o.detail);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
