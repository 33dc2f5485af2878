//! The subcommands, callable without going through argument parsing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gaaf_core::nn::Layer;
use gaaf_core::probes::{net_variance_probe, network_saturation, probe_point_names};
use gaaf_core::RngStream;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{
    load_checkpoint, load_corpus, run_seed, CliError, CliResult, Corpus, Split,
};
use crate::report::{
    comparison_table, create_dir, histogram_csv, saturation_csv, variance_csv, variance_nodes_csv,
    write_file, write_json, write_seed_run, RunReport,
};

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    pub seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.training.seeds = vec![s];
        }
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn config_name(cfg: &ExperimentConfig, path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    cfg.display_name(&stem)
}

/// Trains every seed of `cfg` and writes the run directory:
/// `config.toml`, `summary.json` and one `seed-<s>/` per seed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    name: &str,
    out: &Path,
) -> CliResult<RunReport> {
    create_dir(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let mut runs = Vec::with_capacity(cfg.training.seeds.len());
    for &seed in &cfg.training.seeds {
        let run = run_seed(cfg, corpus, seed)?;
        runs.push(write_seed_run(out, &run)?);
    }
    let report = RunReport::new(name.to_string(), cfg.clone(), runs);
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}

pub fn cmd_train(config_path: &Path, ov: &Overrides) -> CliResult<RunReport> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    ov.apply(&mut cfg);
    let corpus = load_corpus(&cfg, ov.data_dir.as_deref())?;
    let name = config_name(&cfg, config_path);
    run_experiment(&cfg, &corpus, &name, &ov.out_dir(&cfg))
}

fn probe_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.training.seeds[0]
}

/// Variance of every probe-point net over `variance_masks` dropout masks on
/// the first `variance_batch` samples of `split`.
pub fn cmd_probe_variance(
    config_path: &Path,
    checkpoint: &Path,
    split: Split,
    ov: &Overrides,
) -> CliResult<PathBuf> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    ov.apply(&mut cfg);
    let corpus = load_corpus(&cfg, ov.data_dir.as_deref())?;
    let net = load_checkpoint(checkpoint, &corpus)?;
    let all_off = net
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Dropout(d) => Some(d.p_drop()),
            _ => None,
        })
        .all(|p| p == 0.0);
    if net.has_dropout() && all_off {
        eprintln!("warning: every dropout layer has p = 0; all variances will be zero");
    }
    let batch = corpus.split(split).head(cfg.probes.variance_batch);
    let mut rng = RngStream::new(probe_seed(&cfg)).split(4);
    let records = net_variance_probe(
        &net,
        &batch.features,
        cfg.probes.variance_masks,
        &mut rng,
        cfg.probes.allow_no_dropout,
    )?;
    let out = ov.out_dir(&cfg);
    create_dir(&out)?;
    let names = probe_point_names(&net);
    write_file(&out.join("variance.csv"), &variance_csv(&records, &names))?;
    write_file(
        &out.join("variance_nodes.csv"),
        &variance_nodes_csv(&records),
    )?;
    Ok(out)
}

/// Evaluation-mode net histograms of every probe point over `split`.
pub fn cmd_histogram(
    config_path: &Path,
    checkpoint: &Path,
    split: Split,
    ov: &Overrides,
) -> CliResult<PathBuf> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    ov.apply(&mut cfg);
    let corpus = load_corpus(&cfg, ov.data_dir.as_deref())?;
    let net = load_checkpoint(checkpoint, &corpus)?;
    let hists = network_saturation(
        &net,
        &corpus.split(split).features,
        cfg.probes.histogram,
        1000,
    )?;
    let names = probe_point_names(&net);
    let out = ov.out_dir(&cfg);
    create_dir(&out)?;
    write_file(&out.join("histogram.csv"), &histogram_csv(&hists, &names))?;
    write_file(&out.join("saturation.csv"), &saturation_csv(&hists, &names))?;
    Ok(out)
}

#[derive(Serialize)]
struct Comparison<'a> {
    rows: &'a [RunReport],
}

/// Runs each config into `<out>/<name>/` and writes `comparison.txt` and
/// `comparison.json` side by side.
pub fn cmd_compare(config_paths: &[PathBuf], ov: &Overrides) -> CliResult<Vec<RunReport>> {
    if config_paths.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two configs".into(),
        ));
    }
    let mut configs = Vec::with_capacity(config_paths.len());
    let mut taken = BTreeSet::new();
    // Validate everything before training anything.
    for path in config_paths {
        let mut cfg = ExperimentConfig::load(path)?;
        ov.apply(&mut cfg);
        let base = config_name(&cfg, path);
        let mut name = base.clone();
        let mut k = 2;
        while !taken.insert(name.clone()) {
            name = format!("{base}-{k}");
            k += 1;
        }
        configs.push((cfg, name));
    }
    let out = ov.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    create_dir(&out)?;
    let mut reports = Vec::with_capacity(configs.len());
    for (cfg, name) in &configs {
        let corpus = load_corpus(cfg, ov.data_dir.as_deref())?;
        reports.push(run_experiment(cfg, &corpus, name, &out.join(name))?);
    }
    write_file(&out.join("comparison.txt"), &comparison_table(&reports))?;
    write_json(&out.join("comparison.json"), &Comparison { rows: &reports })?;
    Ok(reports)
}
