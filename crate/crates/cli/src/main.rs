use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaaf_cli::commands::{cmd_compare, cmd_histogram, cmd_probe_variance, cmd_train, Overrides};
use gaaf_cli::experiment::Split;
use gaaf_cli::report::comparison_table;
use gaaf_cli::reproduce::{reproduce_mnist, ReproduceOptions, Variant};
use gaaf_cli::CliResult;

#[derive(Parser)]
#[command(
    name = "gaaf",
    version,
    about = "Dropout and gradient-acceleration experiments on MLPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// MNIST directory, overriding `dataset.dir`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            data_dir: self.data_dir.clone(),
            out: self.out.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write metrics, checkpoints and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Net variance across dropout masks for a trained checkpoint.
    ProbeVariance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
    /// Histograms of the nets fed to each activation.
    Histogram {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
    /// Train several configs and tabulate them side by side.
    Compare {
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the reference MNIST variants and run every probe.
    ReproduceMnist {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "out/reproduce-mnist")]
        out: PathBuf,
        /// Run this seed only instead of 1, 2 and 3.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        max_epochs: u64,
        /// Use only the first N training images.
        #[arg(long)]
        train_limit: Option<usize>,
        /// Comma-separated subset of variants.
        #[arg(long, value_enum, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, common } => {
            let report = cmd_train(&config, &common.overrides())?;
            print!("{}", comparison_table(std::slice::from_ref(&report)));
        }
        Command::ProbeVariance {
            config,
            checkpoint,
            split,
            common,
        } => {
            let out = cmd_probe_variance(&config, &checkpoint, split, &common.overrides())?;
            println!("wrote {}", out.join("variance.csv").display());
        }
        Command::Histogram {
            config,
            checkpoint,
            split,
            common,
        } => {
            let out = cmd_histogram(&config, &checkpoint, split, &common.overrides())?;
            println!("wrote {}", out.join("histogram.csv").display());
        }
        Command::Compare { configs, common } => {
            let reports = cmd_compare(&configs, &common.overrides())?;
            print!("{}", comparison_table(&reports));
        }
        Command::ReproduceMnist {
            data_dir,
            out,
            seed,
            max_epochs,
            train_limit,
            variants,
        } => {
            let mut opts = ReproduceOptions {
                max_epochs,
                train_limit,
                ..ReproduceOptions::default()
            };
            if let Some(s) = seed {
                opts.seeds = vec![s];
            }
            if let Some(v) = variants {
                opts.variants = v;
            }
            let summary = reproduce_mnist(&data_dir, &out, &opts)?;
            let reports: Vec<_> = summary.reports.into_values().collect();
            print!("{}", comparison_table(&reports));
            println!("wrote {}", out.join("summary.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
