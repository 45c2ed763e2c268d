use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use siamcar::config::{effective_seed, KeyValues};
use siamcar::harness::{evaluate, run_tracker};
use siamcar::model::{ModelConfig, SiamCarNet};
use siamcar::synth::{generate_corpus, SyntheticSpec};
use siamcar::tracker::TrackerConfig;
use siamcar::train::{train, TrainConfig};

/// Synthetic data, training, tracking and evaluation for the anchor-free
/// Siamese tracker. `SIAMCAR_SEED` overrides every configured seed.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence corpus.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset; writes weights, loss_log.csv and a summary.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track every sequence of a dataset from its first ground-truth box.
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a results directory against a dataset.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<KeyValues> {
    KeyValues::load(path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Gen { spec, out } => {
            let mut spec = SyntheticSpec::from_kv(&load(&spec)?)?;
            spec.seed = effective_seed(spec.seed)?;
            let dirs = generate_corpus(&spec, &out)?;
            info!("wrote {} sequences to {}", dirs.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let kv = load(&config)?;
            let model = ModelConfig::from_kv(&kv)?;
            let mut cfg = TrainConfig::from_kv(&kv)?;
            cfg.seed = effective_seed(cfg.seed)?;
            let outcome = train(&data, &model, &cfg, &out)?;
            if let Some(r) = outcome.probe_reduction() {
                info!("probe loss reduced by {:.1}%", 100.0 * r);
            }
        }
        Command::Track {
            data,
            weights,
            config,
            out,
        } => {
            let cfg = TrackerConfig::from_kv(&load(&config)?)?;
            let net = SiamCarNet::load(&weights)
                .with_context(|| format!("loading weights from {}", weights.display()))?;
            let tracked = run_tracker(&data, &net, &cfg, &out)?;
            info!("tracked {} sequences into {}", tracked.len(), out.display());
        }
        Command::Eval { results, data, out } => {
            let report = evaluate(&results, &data, &out)?;
            print!("{}", report.to_kv());
        }
    }
    Ok(())
}
