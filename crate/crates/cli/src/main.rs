mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use eegdecode::Layer;

#[derive(Parser)]
#[command(name = "eegdecode", version, about = "Decode language-model representations from EEG")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated layers, e.g. LSTM1,LSTM2.
    #[arg(long, global = true, value_delimiter = ',')]
    layers: Option<Vec<Layer>>,
    /// Comma-separated analysis cases, e.g. A1,A3.2.
    #[arg(long, global = true, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    /// Number of permutations (0 skips significance testing).
    #[arg(long, global = true)]
    perms: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-subject epochs with planted mappings.
    Synth,
    /// Train the character-level language model.
    TrainLm,
    /// Run the selected analysis cases and layers.
    Run,
    /// Probe each layer with MLP classifiers.
    Probe,
    /// Emit plot data for a results directory.
    Report {
        /// Results directory (defaults to paths.output).
        results: Option<PathBuf>,
        /// Report mean-squared error instead of 2 vs. 2 accuracy.
        #[arg(long)]
        mse: bool,
        /// Render the bundled published reference tables.
        #[arg(long)]
        reference: bool,
    },
}

pub enum Failure {
    /// Bad configuration, flags or inputs (exit 1).
    Validation(anyhow::Error),
    /// Failure during computation (exit 2).
    Compute(anyhow::Error),
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path),
        None => RunConfig::from_toml("", std::path::Path::new(".")),
    }
    .map_err(Failure::Validation)?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(layers) = &g.layers {
        cfg.layers = layers.clone();
    }
    if let Some(cases) = &g.cases {
        cfg.cases = cases.clone();
    }
    if let Some(p) = g.perms {
        cfg.permutation.n_perms = p;
    }
    cfg.validate().map_err(Failure::Validation)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.global)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Compute(e.into()))?;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::TrainLm => commands::train_lm(&cfg),
        Command::Run => commands::run(&cfg),
        Command::Probe => commands::probe(&cfg),
        Command::Report { results, mse, reference } => commands::report(&cfg, results, mse, reference),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
