//! `superct` command-line front end: dataset simulation, transform
//! learning, layered-model training, reconstruction and reporting.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{BaselineConfig, ExperimentConfig, Method, SimulateConfig};
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_RUN};

#[derive(Debug, Parser)]
#[command(
    name = "superct",
    version,
    about = "Low-dose CT reconstruction with layered learned priors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write every layer's image and cost trace.
    #[arg(long, global = true)]
    pub dump_layers: bool,
    /// Hyperparameter preset: paper-ep, paper-ultra or desk.
    #[arg(long, global = true)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantoms and simulated low-dose data.
    Simulate,
    /// Build a dataset from raw float32 images with JSON sidecars.
    Import,
    /// Learn a union of sparsifying transforms from training references.
    LearnTransforms,
    /// Train a layered model.
    TrainSuper,
    /// Reconstruct a split with the configured method.
    Reconstruct,
    /// Summarize metric CSVs into JSON.
    Report {
        /// Metric CSVs; the config's `metrics` list when empty.
        csvs: Vec<PathBuf>,
        /// Summary destination; `<output_dir>/summary.json` or stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required for this command"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.preset.is_some() {
        cfg.preset = cli.preset.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<commands::Outputs> {
    match &cli.command {
        Command::Report { csvs, output } => {
            let cfg = match &cli.config {
                Some(_) => Some(load_config(cli)?),
                None => None,
            };
            let csvs = if csvs.is_empty() {
                cfg.as_ref().map(|c| c.metrics.clone()).unwrap_or_default()
            } else {
                csvs.clone()
            };
            commands::report_to(cfg.as_ref(), &csvs, output.as_deref())
        }
        cmd => {
            let cfg = load_config(cli)?;
            match cmd {
                Command::Simulate => commands::simulate(&cfg),
                Command::Import => commands::import(&cfg),
                Command::LearnTransforms => commands::learn_transforms(&cfg),
                Command::TrainSuper => commands::train_super(&cfg),
                Command::Reconstruct => commands::reconstruct(&cfg, cli.dump_layers),
                Command::Report { .. } => unreachable!(),
            }
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| execute(&cli).and_then(|o| Ok((o.hash()?, o.files.len())))) {
        Ok((hash, n)) => {
            if n > 0 {
                println!("wrote {n} files, output hash {hash}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
