//! Run summaries and the plot-ready CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gaaf_core::probes::{NetVarianceRecord, SaturationHistogram};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{mean_std, CliError, CliResult, SeedRun};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

/// Per-seed outcome. Paths are relative to the directory holding the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics_csv: PathBuf,
    pub timing_csv: PathBuf,
    pub checkpoint: PathBuf,
    /// Test accuracy of the returned (best-epoch) network.
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Epoch with the best monitored value.
    pub epochs_to_converge: u64,
    pub epochs_run: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedSummary>,
    pub test_accuracy: Aggregate,
    pub epochs_to_converge: Aggregate,
}

impl RunReport {
    pub fn new(name: String, config: ExperimentConfig, runs: Vec<SeedSummary>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let epochs: Vec<f64> = runs.iter().map(|r| r.epochs_to_converge as f64).collect();
        Self {
            name,
            config,
            test_accuracy: Aggregate::of(&acc),
            epochs_to_converge: Aggregate::of(&epochs),
            runs,
        }
    }
}

/// Writes `seed-<s>/{metrics.csv,timing.csv,model.ckpt}` under `dir`.
pub fn write_seed_run(dir: &Path, run: &SeedRun) -> CliResult<SeedSummary> {
    let rel = PathBuf::from(format!("seed-{}", run.seed));
    let seed_dir = dir.join(&rel);
    create_dir(&seed_dir)?;
    write_file(&seed_dir.join("metrics.csv"), &run.outcome.log.to_csv())?;
    write_file(&seed_dir.join("timing.csv"), &run.outcome.log.timing_csv())?;
    gaaf_core::nn::checkpoint::save(&run.net, &seed_dir.join("model.ckpt"))?;
    Ok(SeedSummary {
        seed: run.seed,
        metrics_csv: rel.join("metrics.csv"),
        timing_csv: rel.join("timing.csv"),
        checkpoint: rel.join("model.ckpt"),
        test_accuracy: run.test.accuracy,
        test_loss: run.test.loss,
        epochs_to_converge: run.outcome.best_epoch,
        epochs_run: run.outcome.epochs_run,
    })
}

/// `layer,point,mean_variance,masks`
pub fn variance_csv(records: &[NetVarianceRecord], names: &[String]) -> String {
    let mut out = String::from("layer,point,mean_variance,masks\n");
    for (r, name) in records.iter().zip(names) {
        let _ = writeln!(out, "{},{},{},{}", r.layer, name, r.mean_variance, r.masks);
    }
    out
}

/// `layer,node,variance`
pub fn variance_nodes_csv(records: &[NetVarianceRecord]) -> String {
    let mut out = String::from("layer,node,variance\n");
    for r in records {
        for (j, v) in r.node_variance.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", r.layer, j + 1, v);
        }
    }
    out
}

/// `point,bin,lo,hi,count`; bins are half-open `[lo, hi)`.
pub fn histogram_csv(hists: &[SaturationHistogram], names: &[String]) -> String {
    let mut out = String::from("point,bin,lo,hi,count\n");
    for (h, name) in hists.iter().zip(names) {
        let edges = h.bin_edges();
        for (b, count) in h.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name},{},{},{},{count}",
                b + 1,
                edges[b],
                edges[b + 1]
            );
        }
    }
    out
}

/// `point,total,saturated,saturation_fraction,underflow,overflow`
pub fn saturation_csv(hists: &[SaturationHistogram], names: &[String]) -> String {
    let mut out = String::from("point,total,saturated,saturation_fraction,underflow,overflow\n");
    for (h, name) in hists.iter().zip(names) {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{}",
            h.total,
            h.saturated,
            h.saturation_fraction(),
            h.underflow,
            h.overflow
        );
    }
    out
}

/// Fixed-width table, one row per report.
pub fn comparison_table(reports: &[RunReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max("name".len());
    let mut out = format!(
        "{:<width$}  {:>6}  {:>22}  {:>18}\n",
        "name", "seeds", "test accuracy (%)", "epochs to converge"
    );
    for r in reports {
        let acc = format!(
            "{:.2} ({:.2})",
            100.0 * r.test_accuracy.mean,
            100.0 * r.test_accuracy.std
        );
        let ep = format!(
            "{:.1} ({:.1})",
            r.epochs_to_converge.mean, r.epochs_to_converge.std
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>22}  {:>18}",
            r.name,
            r.runs.len(),
            acc,
            ep
        );
    }
    out
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, &text)
}
