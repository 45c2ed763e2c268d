//! Generates a synthetic corpus, trains the toy network, then tracks and
//! scores held-out sequences.
//!
//! `cargo run --release --example train_and_track [steps]`

use std::time::Instant;

use siamcar::harness::{evaluate, run_tracker};
use siamcar::model::ModelConfig;
use siamcar::synth::{generate_corpus, Motion, SyntheticSpec};
use siamcar::tracker::TrackerConfig;
use siamcar::train::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let root = tempfile::tempdir()?;
    let (train_dir, test_dir) = (root.path().join("train"), root.path().join("test"));
    let start = Instant::now();

    let train_spec = SyntheticSpec { sequences: 20, frames: 30, seed: 42, ..SyntheticSpec::default() };
    generate_corpus(&train_spec, &train_dir)?;
    let test_spec = SyntheticSpec {
        sequences: 5,
        frames: 50,
        motion: Motion::Linear,
        seed: 4242,
        ..SyntheticSpec::default()
    };
    generate_corpus(&test_spec, &test_dir)?;

    let cfg = TrainConfig {
        epochs: 10,
        steps_per_epoch: (steps / 10).max(1),
        ..TrainConfig::default()
    };
    let outcome = train(&train_dir, &ModelConfig::default(), &cfg, &root.path().join("weights"))?;
    if let (Some(a), Some(b)) = (outcome.probe_initial, outcome.probe_final) {
        println!(
            "probe loss {:.4} -> {:.4} ({:.1}% lower)",
            a.total,
            b.total,
            100.0 * (1.0 - b.total / a.total)
        );
    }

    let results = root.path().join("results");
    run_tracker(&test_dir, &outcome.net, &TrackerConfig::default(), &results)?;
    let report = evaluate(&results, &test_dir, &root.path().join("report"))?;
    println!(
        "AO {:.3}  SR0.5 {:.3}  SR0.75 {:.3}  AUC {:.3}  P@20 {:.3}",
        report.ao,
        report.sr(50).unwrap_or(0.0),
        report.sr(75).unwrap_or(0.0),
        report.auc,
        report.precision
    );
    print!("{}", std::fs::read_to_string(root.path().join("report/per_sequence.csv"))?);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
