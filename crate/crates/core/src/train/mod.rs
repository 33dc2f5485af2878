//! Loss, optimizers, early stopping and the epoch loop.

pub mod loss;
mod metrics;
mod optim;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use loss::{argmax, per_sample_cross_entropy, softmax_cross_entropy};
pub use metrics::{EpochMetrics, MetricsLog};
pub use optim::{OptimizerKind, OptimizerState};

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::numcore::RngStream;
use crate::probes::{self, HistogramSpec, SaturationHistogram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
}

/// Stop after `patience` epochs without an improvement larger than
/// `min_delta` in the monitored metric, or at `max_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingRule {
    pub max_epochs: u64,
    #[serde(default = "default_patience")]
    pub patience: u64,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default = "default_monitor")]
    pub monitor: Monitor,
}

fn default_patience() -> u64 {
    10
}
fn default_min_delta() -> f64 {
    1e-4
}
fn default_monitor() -> Monitor {
    Monitor::ValLoss
}

impl StoppingRule {
    pub fn new(max_epochs: u64) -> Self {
        Self {
            max_epochs,
            patience: default_patience(),
            min_delta: default_min_delta(),
            monitor: default_monitor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Tracks the best monitored value and decides when to stop.
#[derive(Clone, Debug)]
pub struct StoppingTracker {
    rule: StoppingRule,
    best: Option<(u64, f64)>,
    since_best: u64,
}

impl StoppingTracker {
    pub fn new(rule: StoppingRule) -> Self {
        Self {
            rule,
            best: None,
            since_best: 0,
        }
    }

    /// Records one epoch's monitored value; returns `true` if it is the new best.
    pub fn observe(&mut self, epoch: u64, value: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some((_, best)) => match self.rule.monitor {
                Monitor::ValLoss => value < best - self.rule.min_delta,
                Monitor::ValAccuracy => value > best + self.rule.min_delta,
            },
        };
        if improved {
            self.best = Some((epoch, value));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self, epoch: u64) -> bool {
        epoch >= self.rule.max_epochs || self.since_best >= self.rule.patience
    }

    pub fn best(&self) -> Option<(u64, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub stopping: StoppingRule,
    /// Gradient information is probed every this many epochs; 0 disables it.
    pub grad_info_every: u64,
    pub grad_info_samples: usize,
    /// Per-epoch saturation fractions over the test set (or the validation
    /// set when there is no test set).
    pub track_saturation: bool,
    pub histogram: HistogramSpec,
    /// Reinstate the parameters of the best epoch when training ends.
    pub restore_best: bool,
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            optimizer: OptimizerKind::default(),
            stopping: StoppingRule::new(100),
            grad_info_every: 0,
            grad_info_samples: 128,
            track_saturation: false,
            histogram: HistogramSpec::default(),
            restore_best: true,
            eval_chunk: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.stopping.validate()?;
        self.histogram.validate()
    }
}

/// Data for one run. The monitored metric falls back to the training-mode
/// epoch loss/accuracy when there is no validation set.
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub validation: Option<&'a Dataset>,
    pub test: Option<&'a Dataset>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    /// Epoch with the best monitored metric ("epochs to converge").
    pub best_epoch: u64,
    pub best_value: f64,
    pub epochs_run: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Randomness consumed by one training run, one independent stream per
/// consumer.
#[derive(Clone, Debug)]
pub struct RunStreams {
    pub shuffle_seed: u64,
    pub dropout: RngStream,
    pub probes: RngStream,
}

impl RunStreams {
    pub fn from_root(root: &RngStream) -> Self {
        Self {
            shuffle_seed: root.split(2).seed(),
            dropout: root.split(3),
            probes: root.split(4),
        }
    }
}

pub fn train(
    net: &mut Network,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    streams: RunStreams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let plan = BatchPlan::new(cfg.batch_size, streams.shuffle_seed)?;
    let mut dropout_rng = streams.dropout;
    let mut probe_rng = streams.probes;
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut tracker = StoppingTracker::new(cfg.stopping);
    let dense = net.dense_layers().count();
    let mut log = MetricsLog::new(dense, net.probe_count());
    let probe_set = data.train.head(cfg.grad_info_samples);
    let saturation_set = data.test.or(data.validation);
    let mut best_net: Option<Network> = None;
    let mut epoch = 0u64;

    loop {
        epoch += 1;
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (x, y) in plan.batches(data.train, epoch - 1) {
            let out = net.forward(&x, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = softmax_cross_entropy(&out, &y)?;
            loss_sum += loss * y.len() as f64;
            correct += (0..out.rows())
                .filter(|&r| argmax(out.row(r)) == y[r])
                .count();
            net.zero_grads();
            net.backward_params(&grad)?;
            opt.step(net.params_mut())?;
        }
        let n = data.train.len() as f64;
        let train_loss = loss_sum / n;
        let train_accuracy = correct as f64 / n;

        let val = data
            .validation
            .map(|v| evaluate_chunked(net, v, cfg.eval_chunk))
            .transpose()?;
        let (test, saturation) = match (data.test, cfg.track_saturation) {
            (Some(t), true) => {
                let (e, h) = evaluate_with_saturation(net, t, cfg.histogram, cfg.eval_chunk)?;
                (Some(e), h)
            }
            (Some(t), false) => (Some(evaluate_chunked(net, t, cfg.eval_chunk)?), Vec::new()),
            (None, true) => match saturation_set {
                Some(s) => (
                    None,
                    probes::network_saturation(net, &s.features, cfg.histogram, cfg.eval_chunk)?,
                ),
                None => (None, Vec::new()),
            },
            (None, false) => (None, Vec::new()),
        };
        let grad_info = if cfg.grad_info_every > 0 && epoch.is_multiple_of(cfg.grad_info_every) {
            probes::network_gradient_info(
                net,
                &probe_set.features,
                &probe_set.labels,
                &mut probe_rng,
                epoch,
            )?
            .into_iter()
            .map(|r| r.value)
            .collect()
        } else {
            Vec::new()
        };

        let monitored = match (cfg.stopping.monitor, val) {
            (Monitor::ValLoss, Some(v)) => v.loss,
            (Monitor::ValAccuracy, Some(v)) => v.accuracy,
            (Monitor::ValLoss, None) => train_loss,
            (Monitor::ValAccuracy, None) => train_accuracy,
        };
        if tracker.observe(epoch, monitored) && cfg.restore_best {
            best_net = Some(net.clone());
        }
        log.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: val.map(|v| v.loss),
            val_accuracy: val.map(|v| v.accuracy),
            test_loss: test.map(|t| t.loss),
            test_accuracy: test.map(|t| t.accuracy),
            grad_info,
            saturation: saturation.iter().map(|h| h.saturation_fraction()).collect(),
            seconds: started.elapsed().as_secs_f64(),
        })?;
        if tracker.should_stop(epoch) {
            break;
        }
    }

    if let Some(best) = best_net {
        *net = best;
    }
    let (best_epoch, best_value) = tracker.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_value,
        epochs_run: epoch,
    })
}

/// Evaluation-mode accuracy and mean cross-entropy. Argmax ties resolve to
/// the lowest class index.
pub fn evaluate(net: &Network, dataset: &Dataset) -> Result<Evaluation> {
    evaluate_chunked(net, dataset, 1000)
}

pub fn evaluate_chunked(net: &Network, dataset: &Dataset, chunk: usize) -> Result<Evaluation> {
    let (e, _) = evaluate_inner(net, dataset, None, chunk)?;
    Ok(e)
}

/// Evaluation plus saturation histograms of every probe point.
pub fn evaluate_with_saturation(
    net: &Network,
    dataset: &Dataset,
    spec: HistogramSpec,
    chunk: usize,
) -> Result<(Evaluation, Vec<SaturationHistogram>)> {
    evaluate_inner(net, dataset, Some(spec), chunk)
}

fn evaluate_inner(
    net: &Network,
    dataset: &Dataset,
    spec: Option<HistogramSpec>,
    chunk: usize,
) -> Result<(Evaluation, Vec<SaturationHistogram>)> {
    if dataset.is_empty() {
        return Err(Error::domain("evaluation on an empty dataset"));
    }
    let mut hists = match spec {
        Some(s) => vec![SaturationHistogram::new(s)?; net.probe_count()],
        None => Vec::new(),
    };
    let chunk = chunk.max(1);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + chunk).min(dataset.len());
        let x = dataset.features.slice_rows(start, end);
        let labels = &dataset.labels[start..end];
        let out = if spec.is_some() {
            let rec = net.forward_eval_recording(&x)?;
            for (h, n) in hists.iter_mut().zip(&rec.nets) {
                h.accumulate(n.as_slice());
            }
            rec.output
        } else {
            net.forward_eval(&x)?
        };
        let (losses, _) = per_sample_cross_entropy(&out, labels)?;
        loss_sum += losses.iter().sum::<f64>();
        correct += (0..out.rows())
            .filter(|&r| argmax(out.row(r)) == labels[r])
            .count();
        start = end;
    }
    let n = dataset.len() as f64;
    Ok((
        Evaluation {
            accuracy: correct as f64 / n,
            loss: loss_sum / n,
        },
        hists,
    ))
}
