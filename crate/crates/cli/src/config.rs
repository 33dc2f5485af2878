//! Declarative experiment description, read from TOML.
//!
//! Every table rejects unknown keys. Semantic checks run after parsing and
//! report the offending line of the source file when it can be located.

use std::fmt;
use std::path::{Path, PathBuf};

use gaaf_core::activations::{Activation, ActivationKind, GaafSpec, ShapeKind, DEFAULT_FREQUENCY};
use gaaf_core::nn::MlpSpec;
use gaaf_core::probes::HistogramSpec;
use gaaf_core::train::{Monitor, OptimizerKind, StoppingRule, TrainConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Label used in reports and comparison tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// The four IDX files in `dir` (plain or gzipped).
    Mnist {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
        /// Use only the first `train_limit` training images.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Gaussian blobs; the test set is drawn from the same centers.
    Synthetic {
        n: usize,
        #[serde(default = "default_test_n")]
        test_n: usize,
        classes: usize,
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_test_n() -> usize {
    200
}
fn default_spread() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths; input and output widths come from the dataset.
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub per_sample_mask: bool,
    #[serde(default)]
    pub batchnorm: bool,
    /// Presence of this table turns GAAF on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaaf: Option<GaafConfig>,
}

fn default_activation() -> ActivationKind {
    ActivationKind::Tanh
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaafConfig {
    #[serde(default = "default_frequency")]
    pub k: f64,
    /// Defaults to the shape paired with the base activation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeKind>,
}

fn default_frequency() -> f64 {
    DEFAULT_FREQUENCY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub early_stopping: bool,
    /// Held-out tail of the shuffled training set. Defaults to 0.1 with
    /// early stopping and 0 without.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    #[serde(default = "default_patience")]
    pub patience: u64,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default = "default_monitor")]
    pub monitor: Monitor,
    #[serde(default = "yes")]
    pub restore_best: bool,
}

fn default_batch_size() -> usize {
    128
}
fn default_max_epochs() -> u64 {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn yes() -> bool {
    true
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

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            seeds: default_seeds(),
            early_stopping: true,
            validation_fraction: None,
            patience: default_patience(),
            min_delta: default_min_delta(),
            monitor: default_monitor(),
            restore_best: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Gradient information every this many epochs; 0 turns it off.
    #[serde(default)]
    pub grad_info_every: u64,
    #[serde(default = "default_probe_batch")]
    pub grad_info_samples: usize,
    /// Per-epoch saturation fractions on the test set.
    #[serde(default = "yes")]
    pub track_saturation: bool,
    #[serde(default = "default_variance_masks")]
    pub variance_masks: usize,
    #[serde(default = "default_probe_batch")]
    pub variance_batch: usize,
    /// Let the variance probe run on a network without dropout.
    #[serde(default)]
    pub allow_no_dropout: bool,
    #[serde(default)]
    pub histogram: HistogramSpec,
}

fn default_probe_batch() -> usize {
    128
}
fn default_variance_masks() -> usize {
    20
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            grad_info_every: 0,
            grad_info_samples: default_probe_batch(),
            track_saturation: true,
            variance_masks: default_variance_masks(),
            variance_batch: default_probe_batch(),
            allow_no_dropout: false,
            histogram: HistogramSpec::default(),
        }
    }
}

/// A configuration problem, optionally anchored to a source line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{}: {}", p.display(), l, self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {}: {}", l, self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text).map_err(|mut e| {
            e.path = Some(path.to_path_buf());
            e
        })
    }

    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            ConfigError {
                path: None,
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        if let Err((key, message)) = cfg.check() {
            return Err(ConfigError {
                path: None,
                line: locate_key(text, key),
                message: format!("{key}: {message}"),
            });
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Semantic validation; the error names the dotted key at fault.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if self.schema != SCHEMA_VERSION {
            return Err((
                "schema",
                format!(
                    "unsupported schema {}, expected {SCHEMA_VERSION}",
                    self.schema
                ),
            ));
        }
        match &self.dataset {
            DatasetConfig::Mnist {
                train_limit,
                test_limit,
                ..
            } => {
                if *train_limit == Some(0) {
                    return Err(("dataset.train_limit", "must be at least 1".into()));
                }
                if *test_limit == Some(0) {
                    return Err(("dataset.test_limit", "must be at least 1".into()));
                }
            }
            DatasetConfig::Synthetic {
                n,
                test_n,
                classes,
                dim,
                spread,
                ..
            } => {
                if *classes < 2 {
                    return Err(("dataset.classes", "need at least 2 classes".into()));
                }
                if n < classes {
                    return Err(("dataset.n", "need at least one sample per class".into()));
                }
                if test_n < classes {
                    return Err((
                        "dataset.test_n",
                        "need at least one sample per class".into(),
                    ));
                }
                if *dim == 0 {
                    return Err(("dataset.dim", "must be at least 1".into()));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(("dataset.spread", "must be a non-negative number".into()));
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(("model.hidden", "layer widths must be positive".into()));
        }
        if let Some(p) = self.model.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(("model.dropout", format!("{p} is outside [0, 1)")));
            }
        }
        if let Some(g) = &self.model.gaaf {
            if !(g.k > 0.0 && g.k.is_finite()) {
                return Err(("model.gaaf.k", "must be positive".into()));
            }
            if let Some(shape) = &g.shape {
                shape
                    .validate()
                    .map_err(|e| ("model.gaaf.shape", e.to_string()))?;
            }
        }
        self.optimizer
            .validate()
            .map_err(|e| ("optimizer", e.to_string()))?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(("training.batch_size", "must be at least 1".into()));
        }
        if t.max_epochs == 0 {
            return Err(("training.max_epochs", "must be at least 1".into()));
        }
        if t.seeds.is_empty() {
            return Err(("training.seeds", "list at least one seed".into()));
        }
        if t.patience == 0 {
            return Err(("training.patience", "must be at least 1".into()));
        }
        if !(t.min_delta >= 0.0 && t.min_delta.is_finite()) {
            return Err(("training.min_delta", "must be non-negative".into()));
        }
        if let Some(f) = t.validation_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err((
                    "training.validation_fraction",
                    format!("{f} is outside [0, 1)"),
                ));
            }
        }
        let p = &self.probes;
        if p.grad_info_samples == 0 {
            return Err(("probes.grad_info_samples", "must be at least 1".into()));
        }
        if p.variance_masks < 2 {
            return Err(("probes.variance_masks", "need at least 2 masks".into()));
        }
        if p.variance_batch == 0 {
            return Err(("probes.variance_batch", "must be at least 1".into()));
        }
        p.histogram
            .validate()
            .map_err(|e| ("probes.histogram", e.to_string()))?;
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        match self.model.gaaf {
            None => Activation::Plain(self.model.activation),
            Some(g) => Activation::Gaaf(GaafSpec {
                base: self.model.activation,
                k: g.k,
                shape: g
                    .shape
                    .unwrap_or_else(|| self.model.activation.default_shape()),
            }),
        }
    }

    pub fn mlp_spec(&self, inputs: usize, classes: usize) -> MlpSpec {
        let mut sizes = vec![inputs];
        sizes.extend(&self.model.hidden);
        sizes.push(classes);
        MlpSpec {
            sizes,
            activation: self.activation(),
            dropout: self.model.dropout,
            per_sample_mask: self.model.per_sample_mask,
            batchnorm: self.model.batchnorm,
        }
    }

    pub fn validation_fraction(&self) -> f64 {
        let t = &self.training;
        t.validation_fraction
            .unwrap_or(if t.early_stopping { 0.1 } else { 0.0 })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let patience = if t.early_stopping {
            t.patience
        } else {
            t.max_epochs
        };
        TrainConfig {
            batch_size: t.batch_size,
            optimizer: self.optimizer,
            stopping: StoppingRule {
                max_epochs: t.max_epochs,
                patience,
                min_delta: t.min_delta,
                monitor: t.monitor,
            },
            grad_info_every: self.probes.grad_info_every,
            grad_info_samples: self.probes.grad_info_samples,
            track_saturation: self.probes.track_saturation,
            histogram: self.probes.histogram,
            restore_best: t.restore_best,
            eval_chunk: 1000,
        }
    }

    /// Display name: the configured one, else the given fallback.
    pub fn display_name(&self, fallback: &str) -> String {
        self.name.clone().unwrap_or_else(|| fallback.to_string())
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of the dotted `key` in TOML source: the line assigning its
/// last segment inside the matching table, else the table header.
fn locate_key(text: &str, key: &str) -> Option<usize> {
    let segments: Vec<&str> = key.split('.').collect();
    let mut best = None;
    for depth in (0..segments.len()).rev() {
        let table = segments[..depth].join(".");
        let leaf = segments[depth];
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = header.trim().to_string();
                if current == key && best.is_none() {
                    best = Some(i + 1);
                }
                continue;
            }
            if current == table {
                if let Some((lhs, _)) = line.split_once('=') {
                    if lhs.trim() == leaf {
                        return Some(i + 1);
                    }
                }
            }
        }
        if best.is_some() {
            return best;
        }
    }
    best
}
