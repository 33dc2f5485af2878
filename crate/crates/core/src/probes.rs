//! Measurement instruments: per-layer gradient information, dropout-induced
//! net variance and net-value saturation histograms.
//!
//! Probes never disturb the model they measure: every probe that needs
//! training-mode passes runs them on a private clone.
//!
//! Gradient information of dense layer `k` over `N` samples is
//!
//! ```text
//! G_k = (1/N) Σ_n (1/(I·J)) Σ_i Σ_j |∂E_n / ∂W^k_ij|
//! ```
//!
//! where `E_n` is the loss of sample `n` alone and `W^k` is `I × J`. `N`
//! counts samples (not nodes): each term is one sample's mean absolute weight
//! gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Network};
use crate::numcore::{Matrix, RngStream};
use crate::train::loss::per_sample_cross_entropy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientInfoRecord {
    /// 1-based ordinal of the dense layer.
    pub layer: usize,
    pub value: f64,
    pub samples: usize,
    pub epoch: u64,
}

/// Streaming form of the gradient-information mean, so per-sample gradient
/// matrices need not be kept.
#[derive(Clone, Debug)]
pub struct GradientInfoAccumulator {
    shape: Option<(usize, usize)>,
    sum: f64,
    samples: usize,
}

impl Default for GradientInfoAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl GradientInfoAccumulator {
    pub fn new() -> Self {
        Self {
            shape: None,
            sum: 0.0,
            samples: 0,
        }
    }

    pub fn add(&mut self, grad: &Matrix) -> Result<()> {
        match self.shape {
            None => self.shape = Some(grad.shape()),
            Some(s) if s != grad.shape() => {
                return Err(Error::Shape {
                    op: "gradient_info",
                    left: s,
                    right: grad.shape(),
                })
            }
            Some(_) => {}
        }
        if grad.is_empty() {
            return Err(Error::domain("gradient matrix has no entries"));
        }
        let mean_abs = grad.as_slice().iter().map(|g| g.abs()).sum::<f64>() / grad.len() as f64;
        self.sum += mean_abs;
        self.samples += 1;
        Ok(())
    }

    pub fn finish(&self, layer: usize, epoch: u64) -> Result<GradientInfoRecord> {
        if self.samples == 0 {
            return Err(Error::domain(
                "gradient information needs at least one sample",
            ));
        }
        Ok(GradientInfoRecord {
            layer,
            value: self.sum / self.samples as f64,
            samples: self.samples,
            epoch,
        })
    }
}

/// Gradient information from explicit per-sample weight gradients.
pub fn gradient_info(per_sample_grads: &[Matrix], layer: usize) -> Result<GradientInfoRecord> {
    let mut acc = GradientInfoAccumulator::new();
    for g in per_sample_grads {
        acc.add(g)?;
    }
    acc.finish(layer, 0)
}

/// Gradient information of every dense layer of `net` over the rows of `x`.
///
/// Per-sample gradients come from one training-mode forward/backward per
/// sample (a batch of one, fresh dropout masks from `rng`). Batch
/// normalization cannot run on a batch of one, so for networks containing it
/// the whole batch is forwarded with pinned dropout masks and the loss of one
/// row at a time is backpropagated through the shared batch statistics.
pub fn network_gradient_info(
    net: &Network,
    x: &Matrix,
    labels: &[usize],
    rng: &mut RngStream,
    epoch: u64,
) -> Result<Vec<GradientInfoRecord>> {
    if x.rows() == 0 {
        return Err(Error::domain(
            "gradient information needs at least one sample",
        ));
    }
    let mut probe = net.clone();
    let dense = probe.dense_layers().count();
    let mut accs = vec![GradientInfoAccumulator::new(); dense];

    if !probe.has_batchnorm() {
        for n in 0..x.rows() {
            probe.zero_grads();
            let out = probe.forward(&x.slice_rows(n, n + 1), Mode::Train, rng)?;
            let (_, grad) = per_sample_cross_entropy(&out, &labels[n..n + 1])?;
            probe.backward(&grad)?;
            for (acc, layer) in accs.iter_mut().zip(probe.dense_layers()) {
                acc.add(layer.grad_weights())?;
            }
        }
    } else {
        let out = probe.forward(x, Mode::Train, rng)?;
        let (_, full_grad) = per_sample_cross_entropy(&out, labels)?;
        let masks: Vec<Matrix> = probe
            .dropout_layers_mut()
            .filter_map(|d| d.current_mask().cloned())
            .collect();
        for (d, m) in probe.dropout_layers_mut().zip(masks) {
            d.pin_mask(m)?;
        }
        for n in 0..x.rows() {
            probe.zero_grads();
            probe.forward(x, Mode::Train, rng)?;
            let mut row_grad = Matrix::zeros(out.rows(), out.cols());
            for c in 0..out.cols() {
                row_grad.set(n, c, full_grad.get(n, c))?;
            }
            probe.backward(&row_grad)?;
            for (acc, layer) in accs.iter_mut().zip(probe.dense_layers()) {
                acc.add(layer.grad_weights())?;
            }
        }
    }
    accs.iter()
        .enumerate()
        .map(|(i, acc)| acc.finish(i + 1, epoch))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetVarianceRecord {
    /// 1-based probe point; the last one is the output logits.
    pub layer: usize,
    /// Per node: variance across masks, averaged over the batch rows.
    pub node_variance: Vec<f64>,
    pub mean_variance: f64,
    pub masks: usize,
}

/// Runs `masks` training-mode forwards of the same batch with fresh dropout
/// masks and reports the variance of every probe-point net.
///
/// Variances use the unbiased `1/(M−1)` estimator, computed per (row, node)
/// with Welford updates and then averaged over rows, then over nodes.
pub fn net_variance_probe(
    net: &Network,
    batch: &Matrix,
    masks: usize,
    rng: &mut RngStream,
    allow_without_dropout: bool,
) -> Result<Vec<NetVarianceRecord>> {
    if masks < 2 {
        return Err(Error::domain(format!(
            "variance probe needs at least 2 masks, got {masks}"
        )));
    }
    if !net.has_dropout() && !allow_without_dropout {
        return Err(Error::Config(
            "network has no dropout layer; net variance would be trivially zero".into(),
        ));
    }
    let mut probe = net.clone();
    let mut mean: Vec<Vec<f64>> = Vec::new();
    let mut m2: Vec<Vec<f64>> = Vec::new();
    let mut shapes = Vec::new();
    for t in 0..masks {
        let rec = probe.forward_recording(batch, Mode::Train, rng)?;
        if t == 0 {
            shapes = rec.nets.iter().map(|n| n.shape()).collect();
            mean = rec.nets.iter().map(|n| vec![0.0; n.len()]).collect();
            m2 = mean.clone();
        }
        let count = (t + 1) as f64;
        for ((net_vals, mu), s) in rec.nets.iter().zip(&mut mean).zip(&mut m2) {
            for ((&z, mu), s) in net_vals
                .as_slice()
                .iter()
                .zip(mu.iter_mut())
                .zip(s.iter_mut())
            {
                let delta = z - *mu;
                *mu += delta / count;
                *s += delta * (z - *mu);
            }
        }
    }
    let denom = (masks - 1) as f64;
    Ok(m2
        .iter()
        .zip(&shapes)
        .enumerate()
        .map(|(i, (s, &(rows, cols)))| {
            let mut node = vec![0.0; cols];
            for r in 0..rows {
                for (c, acc) in node.iter_mut().enumerate() {
                    *acc += s[r * cols + c] / denom;
                }
            }
            for v in node.iter_mut() {
                *v /= rows as f64;
            }
            let mean_variance = node.iter().sum::<f64>() / cols as f64;
            NetVarianceRecord {
                layer: i + 1,
                node_variance: node,
                mean_variance,
                masks,
            }
        })
        .collect())
}

/// Closed-form variance of `z_j = Σ_i W_ij d_i x_i + b_j` under independent
/// Bernoulli drops: `p(1−p) Σ_i (W_ij x_i)²`, averaged over the rows of `x`.
pub fn dropout_net_variance_closed_form(w: &Matrix, x: &Matrix, p_drop: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(Error::domain(format!(
            "drop probability {p_drop} outside [0, 1]"
        )));
    }
    if x.cols() != w.rows() || x.rows() == 0 {
        return Err(Error::Shape {
            op: "dropout_net_variance_closed_form",
            left: x.shape(),
            right: w.shape(),
        });
    }
    let scale = p_drop * (1.0 - p_drop);
    let mut out = vec![0.0; w.cols()];
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (j, acc) in out.iter_mut().enumerate() {
            let s: f64 = xr
                .iter()
                .enumerate()
                .map(|(i, &xi)| (w.get(i, j) * xi).powi(2))
                .sum();
            *acc += scale * s;
        }
    }
    for v in out.iter_mut() {
        *v /= x.rows() as f64;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_lo() -> f64 {
    -5.0
}
fn default_hi() -> f64 {
    5.0
}
fn default_bins() -> usize {
    50
}
fn default_threshold() -> f64 {
    2.0
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            lo: default_lo(),
            hi: default_hi(),
            bins: default_bins(),
            threshold: default_threshold(),
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::domain(format!(
                "histogram range [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::domain("saturation threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Uniform-bin histogram over `[lo, hi)` with explicit under/overflow, plus
/// the count of values with `|z| > threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationHistogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub saturated: u64,
    pub total: u64,
}

impl SaturationHistogram {
    pub fn new(spec: HistogramSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            counts: vec![0; spec.bins],
            spec,
            underflow: 0,
            overflow: 0,
            saturated: 0,
            total: 0,
        })
    }

    pub fn accumulate(&mut self, values: &[f64]) {
        let width = (self.spec.hi - self.spec.lo) / self.spec.bins as f64;
        for &v in values {
            self.total += 1;
            if v.abs() > self.spec.threshold {
                self.saturated += 1;
            }
            if v < self.spec.lo {
                self.underflow += 1;
            } else if v >= self.spec.hi {
                self.overflow += 1;
            } else {
                let idx = (((v - self.spec.lo) / width).floor() as usize).min(self.spec.bins - 1);
                self.counts[idx] += 1;
            }
        }
    }

    pub fn saturation_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.saturated as f64 / self.total as f64
        }
    }

    /// `bins + 1` edges from `lo` to `hi`.
    pub fn bin_edges(&self) -> Vec<f64> {
        let s = &self.spec;
        (0..=s.bins)
            .map(|i| s.lo + (s.hi - s.lo) * i as f64 / s.bins as f64)
            .collect()
    }
}

pub fn saturation_histogram(nets: &Matrix, spec: HistogramSpec) -> Result<SaturationHistogram> {
    if nets.is_empty() {
        return Err(Error::domain("saturation histogram of an empty net matrix"));
    }
    let mut h = SaturationHistogram::new(spec)?;
    h.accumulate(nets.as_slice());
    Ok(h)
}

/// Evaluation-mode histograms of every probe point over `features`,
/// processed in row chunks.
pub fn network_saturation(
    net: &Network,
    features: &Matrix,
    spec: HistogramSpec,
    chunk: usize,
) -> Result<Vec<SaturationHistogram>> {
    if features.rows() == 0 {
        return Err(Error::domain("saturation histogram of an empty dataset"));
    }
    let mut hists = vec![SaturationHistogram::new(spec)?; net.probe_count()];
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < features.rows() {
        let end = (start + chunk).min(features.rows());
        let rec = net.forward_eval_recording(&features.slice_rows(start, end))?;
        for (h, n) in hists.iter_mut().zip(&rec.nets) {
            h.accumulate(n.as_slice());
        }
        start = end;
    }
    Ok(hists)
}

/// Index of the dense layer feeding each probe point (1-based), for labelling.
pub fn probe_point_names(net: &Network) -> Vec<String> {
    let mut names = Vec::new();
    let mut dense_seen = 0;
    for layer in net.layers() {
        match layer {
            Layer::Dense(_) => dense_seen += 1,
            Layer::Activation(_) => names.push(format!("layer{dense_seen}")),
            _ => {}
        }
    }
    if net.probe_count() > names.len() {
        names.push("output".to_string());
    }
    names
}
