use siamcar::model::ModelConfig;
use siamcar::synth::{generate_corpus, Motion, SyntheticSpec};
use siamcar::train::{train, TrainConfig};

#[test]
fn single_pair_overfits() {
    let data = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { frames: 1, sequences: 1, motion: Motion::Static, ..SyntheticSpec::default() };
    generate_corpus(&spec, data.path()).unwrap();
    // one frame, no shift or jitter: every step sees the same pair
    let cfg = TrainConfig {
        epochs: 10,
        freeze_epochs: 0,
        steps_per_epoch: 50,
        batch_size: 1,
        max_shift: 0.0,
        scale_jitter: 0.0,
        probe_pairs: 0,
        ..TrainConfig::default()
    };
    let out = tempfile::tempdir().unwrap();
    let o = train(data.path(), &ModelConfig::default(), &cfg, out.path()).unwrap();
    assert_eq!(o.log.len(), 500);
    assert!(o.log.iter().all(|r| r.loss.total.is_finite()));
    let (first, last) = (o.log[0].loss.total, o.log[499].loss.total);
    assert!(last <= 0.1 * first, "{first} -> {last}");
}
