//! `biharm`: runs damped biharmonic wave experiments from a TOML config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use serde_json::json;

use crate::commands::Run;
use crate::config::ExperimentConfig;
use crate::output::Outputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subcommand {
    Simulate,
    Resolvent,
    Spectrum,
    Observability,
    Multiplier,
    Stability,
    InvertDensity,
    InvertInitial,
}

impl Subcommand {
    fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Resolvent => "resolvent",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Observability => "observability",
            Subcommand::Multiplier => "multiplier",
            Subcommand::Stability => "stability",
            Subcommand::InvertDensity => "invert-density",
            Subcommand::InvertInitial => "invert-initial",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "biharm", version, about = "Damped biharmonic wave experiments")]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Generate synthetic measurements on the once-refined grid.
    #[arg(long)]
    fine_data: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut config = ExperimentConfig::from_path(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut outputs = Outputs::create(&out_dir)?;

    let mut run = Run { config: &mut config, fine_data: cli.fine_data, out: &mut outputs };
    match cli.command {
        Subcommand::Simulate => run.simulate(),
        Subcommand::Resolvent => run.resolvent(),
        Subcommand::Spectrum => run.spectrum(),
        Subcommand::Observability => run.observability(),
        Subcommand::Multiplier => run.multiplier(),
        Subcommand::Stability => run.stability(),
        Subcommand::InvertDensity => run.invert_density(),
        Subcommand::InvertInitial => run.invert_initial(),
    }
    .with_context(|| format!("{} failed", cli.command.name()))?;

    config.output.dir = Some(out_dir.display().to_string());
    let invocation = json!({
        "config_path": cli.config.display().to_string(),
        "threads": cli.threads,
        "fine_data": cli.fine_data,
        "seed_override": cli.seed,
    });
    let manifest = outputs.finish(cli.command.name(), &config, invocation)?;
    println!("{}", manifest.display());
    Ok(())
}
