//! Writes a small synthetic corpus and reads it back as a tracker would.

use siamcar::dataset::list_sequences;
use siamcar::synth::{generate_corpus, Motion, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let spec = SyntheticSpec {
        motion: Motion::Sinusoidal,
        velocity: Some((2.0, 1.0)),
        distractors: 2,
        frames: 12,
        sequences: 3,
        ..SyntheticSpec::default()
    };
    generate_corpus(&spec, dir.path())?;
    for seq in list_sequences(dir.path())? {
        let gt = seq.groundtruth()?;
        let input = seq.tracking_input()?;
        println!(
            "{}: {} frames, first box {:?}, last box {:?}, tracker sees only {:?}",
            seq.id,
            seq.len(),
            gt[0].to_xywh(),
            gt[gt.len() - 1].to_xywh(),
            input.init_box().to_xywh()
        );
    }
    Ok(())
}
