//! Turning a validated config into datasets, networks and finished runs.

use std::fmt;
use std::path::{Path, PathBuf};

use gaaf_core::data::{load_mnist_dir, synthetic_blobs, Dataset, MnistSplit};
use gaaf_core::nn::{checkpoint, Network};
use gaaf_core::train::{self, Evaluation, RunStreams, TrainData, TrainOutcome};
use gaaf_core::RngStream;

use crate::config::{ConfigError, DatasetConfig, ExperimentConfig};

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    Config(String),
    /// Anything that went wrong after the configuration was accepted; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<gaaf_core::Error> for CliError {
    fn from(e: gaaf_core::Error) -> Self {
        match e.root() {
            gaaf_core::Error::Config(m) => CliError::Config(m.clone()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Train and test sets before any validation split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Dataset,
    pub test: Dataset,
}

impl Corpus {
    pub fn split(&self, which: Split) -> &Dataset {
        match which {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

/// Loads the dataset a config describes. `data_dir` overrides the MNIST
/// directory given in the file.
pub fn load_corpus(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> CliResult<Corpus> {
    match &cfg.dataset {
        DatasetConfig::Mnist {
            dir,
            train_limit,
            test_limit,
        } => {
            let dir: PathBuf = match (data_dir, dir) {
                (Some(d), _) => d.to_path_buf(),
                (None, Some(d)) => d.clone(),
                (None, None) => {
                    return Err(CliError::Config(
                        "dataset.dir is not set and no --data-dir was given".into(),
                    ))
                }
            };
            let mut train = load_mnist_dir(&dir, MnistSplit::Train)?;
            let mut test = load_mnist_dir(&dir, MnistSplit::Test)?;
            if let Some(n) = train_limit {
                train = train.head(*n);
            }
            if let Some(n) = test_limit {
                test = test.head(*n);
            }
            Ok(Corpus { train, test })
        }
        DatasetConfig::Synthetic {
            n,
            test_n,
            classes,
            dim,
            spread,
            seed,
        } => {
            let all = synthetic_blobs(n + test_n, *classes, *dim, *spread, *seed)?;
            let idx: Vec<usize> = (0..all.len()).collect();
            Ok(Corpus {
                train: all.select(&idx[..*n]),
                test: all.select(&idx[*n..]),
            })
        }
    }
}

/// A finished training run for one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub net: Network,
    pub outcome: TrainOutcome,
    /// Test-set score of the returned network.
    pub test: Evaluation,
}

/// Builds the network for `seed` and trains it. Initialization, the
/// validation split, shuffling, dropout and probes all derive from `seed`.
pub fn run_seed(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> CliResult<SeedRun> {
    let root = RngStream::new(seed);
    let spec = cfg.mlp_spec(corpus.train.dim(), corpus.train.classes);
    let mut net = Network::mlp(&spec, &mut root.split(1))?;
    let (train_part, validation) = corpus
        .train
        .split_tail(cfg.validation_fraction(), root.split(5).seed())?;
    let data = TrainData {
        train: &train_part,
        validation: validation.as_ref(),
        test: Some(&corpus.test),
    };
    let outcome = train::train(
        &mut net,
        &data,
        &cfg.train_config(),
        RunStreams::from_root(&root),
    )?;
    let test = train::evaluate(&net, &corpus.test)?;
    Ok(SeedRun {
        seed,
        net,
        outcome,
        test,
    })
}

/// Reads a checkpoint and checks that it fits the dataset.
pub fn load_checkpoint(path: &Path, corpus: &Corpus) -> CliResult<Network> {
    let net = checkpoint::load(path)?;
    let dim = corpus.train.dim();
    if net.input_dim() != Some(dim) {
        return Err(CliError::runtime(format!(
            "{}: network expects {:?} inputs but the dataset has {dim} features",
            path.display(),
            net.input_dim()
        )));
    }
    if net.output_dim() != Some(corpus.train.classes) {
        return Err(CliError::runtime(format!(
            "{}: network has {:?} outputs but the dataset has {} classes",
            path.display(),
            net.output_dim(),
            corpus.train.classes
        )));
    }
    Ok(net)
}

/// Mean and sample standard deviation (`n − 1`); the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
