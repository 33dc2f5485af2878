//! The one-shot MNIST pipeline: the reference MLP in five variants, the
//! gradient-information, net-variance and saturation probes, and a single
//! summary JSON.

use std::collections::BTreeMap;
use std::path::Path;

use gaaf_core::activations::ActivationKind;
use gaaf_core::probes::{net_variance_probe, network_saturation, probe_point_names};
use gaaf_core::train::OptimizerKind;
use gaaf_core::RngStream;
use serde::{Deserialize, Serialize};

use crate::config::{
    DatasetConfig, ExperimentConfig, GaafConfig, ModelConfig, ProbeConfig, TrainingConfig,
    SCHEMA_VERSION,
};
use crate::experiment::{load_corpus, run_seed, CliError, CliResult, Corpus};
use crate::report::{
    create_dir, histogram_csv, saturation_csv, write_file, write_json, write_seed_run, Aggregate,
    RunReport,
};

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Dropout,
    Gaaf,
    Bn,
    BnGaaf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::Dropout,
        Variant::Gaaf,
        Variant::Bn,
        Variant::BnGaaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Dropout => "dropout",
            Variant::Gaaf => "gaaf",
            Variant::Bn => "bn",
            Variant::BnGaaf => "bn_gaaf",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceOptions {
    pub seeds: Vec<u64>,
    pub max_epochs: u64,
    /// First `n` training images only.
    pub train_limit: Option<usize>,
    pub variants: Vec<Variant>,
    /// Gradient information every this many epochs (0 turns it off).
    pub grad_info_every: u64,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            max_epochs: 100,
            train_limit: None,
            variants: Variant::ALL.to_vec(),
            grad_info_every: 1,
        }
    }
}

/// 784-512-256-256-10 tanh MLP trained with Adam under the default stopping
/// rule, with the variant's dropout, GAAF and batchnorm switches.
///
/// Batchnorm variants skip gradient information: without batches of one it
/// costs a full-batch backward pass per probe sample.
pub fn variant_config(
    variant: Variant,
    data_dir: &Path,
    opts: &ReproduceOptions,
) -> ExperimentConfig {
    let gaaf = matches!(variant, Variant::Gaaf | Variant::BnGaaf).then_some(GaafConfig {
        k: gaaf_core::activations::DEFAULT_FREQUENCY,
        shape: None,
    });
    let batchnorm = matches!(variant, Variant::Bn | Variant::BnGaaf);
    ExperimentConfig {
        schema: SCHEMA_VERSION,
        name: Some(variant.name().to_string()),
        output_dir: None,
        dataset: DatasetConfig::Mnist {
            dir: Some(data_dir.to_path_buf()),
            train_limit: opts.train_limit,
            test_limit: None,
        },
        model: ModelConfig {
            hidden: vec![512, 256, 256],
            activation: ActivationKind::Tanh,
            dropout: (variant == Variant::Dropout).then_some(0.5),
            per_sample_mask: false,
            batchnorm,
            gaaf,
        },
        optimizer: OptimizerKind::default(),
        training: TrainingConfig {
            max_epochs: opts.max_epochs,
            seeds: opts.seeds.clone(),
            ..TrainingConfig::default()
        },
        probes: ProbeConfig {
            grad_info_every: if batchnorm { 0 } else { opts.grad_info_every },
            ..ProbeConfig::default()
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientInfoSummary {
    /// Per dense layer, mean over seeds of G after the first epoch.
    pub first_epoch: Vec<f64>,
    /// Per dense layer, mean over seeds and over every probed epoch.
    pub whole_training: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationSummary {
    pub points: Vec<String>,
    /// Per probe point, mean over seeds of the test-set fraction `|z| > threshold`.
    pub fraction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub seed: u64,
    pub masks: usize,
    pub batch: usize,
    pub points: Vec<String>,
    pub mean_variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub test_accuracy: Aggregate,
    pub epochs_to_converge: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub options: ReproduceOptions,
    pub accuracy_table: Vec<VariantRow>,
    pub gradient_information: BTreeMap<Variant, GradientInfoSummary>,
    /// Dropout over base, per dense layer, for both gradient summaries.
    pub gradient_ratio_first_epoch: Option<Vec<f64>>,
    pub gradient_ratio_whole_training: Option<Vec<f64>>,
    pub net_variance: Option<VarianceSummary>,
    pub saturation: BTreeMap<Variant, SaturationSummary>,
    /// Mean test accuracy of BN+GAAF minus BN, in percentage points.
    pub batchnorm_gaaf_gain_points: Option<f64>,
    pub reports: BTreeMap<Variant, RunReport>,
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
        .collect()
}

fn ratio(num: &[f64], den: &[f64]) -> Vec<f64> {
    num.iter().zip(den).map(|(a, b)| a / b).collect()
}

/// Trains every requested variant, probes the results and writes
/// `<out>/<variant>/...` plus `<out>/summary.json`.
pub fn reproduce_mnist(
    data_dir: &Path,
    out: &Path,
    opts: &ReproduceOptions,
) -> CliResult<ReproduceSummary> {
    if opts.seeds.is_empty() {
        return Err(CliError::Config(
            "reproduce-mnist needs at least one seed".into(),
        ));
    }
    if opts.variants.is_empty() {
        return Err(CliError::Config(
            "reproduce-mnist needs at least one variant".into(),
        ));
    }
    let probe_cfg = variant_config(Variant::Base, data_dir, opts);
    if let Err((key, msg)) = probe_cfg.check() {
        return Err(CliError::Config(format!("{key}: {msg}")));
    }
    let corpus = load_corpus(&probe_cfg, None)?;
    create_dir(out)?;

    let mut reports = BTreeMap::new();
    let mut gradient_information = BTreeMap::new();
    let mut saturation = BTreeMap::new();
    let mut net_variance = None;

    for &variant in &opts.variants {
        let cfg = variant_config(variant, data_dir, opts);
        let dir = out.join(variant.name());
        create_dir(&dir)?;
        write_file(&dir.join("config.toml"), &cfg.to_toml())?;
        let mut summaries = Vec::new();
        let mut first = Vec::new();
        let mut whole = Vec::new();
        let mut fractions = Vec::new();
        let mut points = Vec::new();
        for &seed in &opts.seeds {
            eprintln!("reproduce-mnist: {} seed {seed}", variant.name());
            let run = run_seed(&cfg, &corpus, seed)?;
            let summary = write_seed_run(&dir, &run)?;
            let probed: Vec<&Vec<f64>> = run
                .outcome
                .log
                .rows()
                .iter()
                .map(|r| &r.grad_info)
                .filter(|g| !g.is_empty())
                .collect();
            if let Some(g) = probed.first() {
                first.push((*g).clone());
                let owned: Vec<Vec<f64>> = probed.iter().map(|g| (*g).clone()).collect();
                whole.push(column_means(&owned));
            }
            let hists =
                network_saturation(&run.net, &corpus.test.features, cfg.probes.histogram, 1000)?;
            points = probe_point_names(&run.net);
            let seed_dir = dir.join(format!("seed-{seed}"));
            write_file(
                &seed_dir.join("histogram.csv"),
                &histogram_csv(&hists, &points),
            )?;
            write_file(
                &seed_dir.join("saturation.csv"),
                &saturation_csv(&hists, &points),
            )?;
            fractions.push(
                hists
                    .iter()
                    .map(|h| h.saturation_fraction())
                    .collect::<Vec<_>>(),
            );

            if variant == Variant::Dropout && net_variance.is_none() {
                net_variance = Some(variance_summary(&cfg, &corpus, &run.net, seed)?);
            }
            summaries.push(summary);
        }
        let report = RunReport::new(variant.name().to_string(), cfg, summaries);
        write_json(&dir.join("summary.json"), &report)?;
        reports.insert(variant, report);
        if !first.is_empty() {
            gradient_information.insert(
                variant,
                GradientInfoSummary {
                    first_epoch: column_means(&first),
                    whole_training: column_means(&whole),
                },
            );
        }
        saturation.insert(
            variant,
            SaturationSummary {
                points,
                fraction: column_means(&fractions),
            },
        );
    }

    let accuracy_table = reports
        .iter()
        .map(|(&variant, r)| VariantRow {
            variant,
            test_accuracy: r.test_accuracy,
            epochs_to_converge: r.epochs_to_converge,
        })
        .collect();
    let pair = |a: Variant, b: Variant| {
        Some((gradient_information.get(&a)?, gradient_information.get(&b)?))
    };
    let gradient_ratio_first_epoch =
        pair(Variant::Dropout, Variant::Base).map(|(d, b)| ratio(&d.first_epoch, &b.first_epoch));
    let gradient_ratio_whole_training = pair(Variant::Dropout, Variant::Base)
        .map(|(d, b)| ratio(&d.whole_training, &b.whole_training));
    let batchnorm_gaaf_gain_points =
        match (reports.get(&Variant::BnGaaf), reports.get(&Variant::Bn)) {
            (Some(g), Some(b)) => Some(100.0 * (g.test_accuracy.mean - b.test_accuracy.mean)),
            _ => None,
        };
    let summary = ReproduceSummary {
        options: opts.clone(),
        accuracy_table,
        gradient_ratio_first_epoch,
        gradient_ratio_whole_training,
        gradient_information,
        net_variance,
        saturation,
        batchnorm_gaaf_gain_points,
        reports,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn variance_summary(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    net: &gaaf_core::nn::Network,
    seed: u64,
) -> CliResult<VarianceSummary> {
    let batch = corpus.test.head(cfg.probes.variance_batch);
    let mut rng = RngStream::new(seed).split(4);
    let records = net_variance_probe(
        net,
        &batch.features,
        cfg.probes.variance_masks,
        &mut rng,
        false,
    )?;
    Ok(VarianceSummary {
        seed,
        masks: cfg.probes.variance_masks,
        batch: batch.len(),
        points: probe_point_names(net),
        mean_variance: records.iter().map(|r| r.mean_variance).collect(),
    })
}
