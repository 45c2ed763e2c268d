//! Dataset-level tracking and evaluation.
//!
//! Results layout: `<out>/<sequence>/<sequence>.txt` with one `x,y,w,h` line
//! per frame, plus `times.txt` holding per-frame seconds. Timing is kept in
//! its own files so box files and reports stay byte-reproducible.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;

use crate::bbox::BBox;
use crate::dataset::{list_sequences, read_boxes, write_boxes, TrackingInput};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, SequenceResult};
use crate::model::SiamCarNet;
use crate::tracker::{Tracker, TrackerConfig};

pub const TIMES_FILE: &str = "times.txt";
pub const TIMING_FILE: &str = "timing.txt";

/// Boxes for one tracked sequence with per-frame tracking seconds.
#[derive(Debug, Clone)]
pub struct TrackedSequence {
    pub id: String,
    pub boxes: Vec<BBox>,
    /// Seconds spent in the tracker for each frame; the first entry covers
    /// initialization.
    pub seconds: Vec<f64>,
}

impl TrackedSequence {
    /// Frames per second over the tracking calls after the first frame.
    pub fn fps(&self) -> Option<f64> {
        let t: f64 = self.seconds.iter().skip(1).sum();
        (self.seconds.len() > 1 && t > 0.0).then(|| (self.seconds.len() - 1) as f64 / t)
    }
}

/// One-pass tracking from the first ground-truth box. Frame 1 is reported as
/// the initialization box itself.
pub fn track_sequence(tracker: &Tracker, input: &TrackingInput) -> Result<TrackedSequence> {
    let init = input.init_box();
    let first = input.frame(0)?;
    let start = Instant::now();
    let mut state = tracker.init_track(&first, init)?;
    let mut seconds = vec![start.elapsed().as_secs_f64()];
    let mut boxes = vec![init];
    for t in 1..input.len() {
        let frame = input.frame(t)?;
        let start = Instant::now();
        let (b, next) = tracker.track_frame(&state, &frame)?;
        seconds.push(start.elapsed().as_secs_f64());
        boxes.push(b);
        state = next;
    }
    Ok(TrackedSequence {
        id: input.id().to_string(),
        boxes,
        seconds,
    })
}

/// Tracks every sequence under `data` and writes results under `out`.
pub fn run_tracker(data: &Path, net: &SiamCarNet, config: &TrackerConfig, out: &Path) -> Result<Vec<TrackedSequence>> {
    let tracker = Tracker::with_config(net, config)?;
    let sequences = list_sequences(data)?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut results = Vec::with_capacity(sequences.len());
    for seq in &sequences {
        let tracked = track_sequence(&tracker, &seq.tracking_input()?)?;
        let dir = out.join(&tracked.id);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        write_boxes(&dir.join(format!("{}.txt", tracked.id)), &tracked.boxes)?;
        let mut times = String::new();
        for s in &tracked.seconds {
            writeln!(times, "{s:.6}").expect("string write");
        }
        let p = dir.join(TIMES_FILE);
        fs::write(&p, times).map_err(Error::io(&p))?;
        info!("tracked {} ({} frames)", tracked.id, tracked.boxes.len());
        results.push(tracked);
    }
    let total_frames: usize = results.iter().map(|r| r.seconds.len().saturating_sub(1)).sum();
    let total_secs: f64 = results.iter().map(|r| r.seconds.iter().skip(1).sum::<f64>()).sum();
    if total_secs > 0.0 {
        let p = out.join(TIMING_FILE);
        let body = format!("frames={total_frames}\nseconds={total_secs:.6}\nfps={:.3}\n", total_frames as f64 / total_secs);
        fs::write(&p, body).map_err(Error::io(&p))?;
    }
    Ok(results)
}

fn result_ids(results: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(results).map_err(Error::io(results))?;
    let mut ids = BTreeSet::new();
    for e in entries {
        let p = e.map_err(Error::io(results))?.path();
        if let Some(name) = p.file_name().map(|n| n.to_string_lossy().into_owned()) {
            if p.join(format!("{name}.txt")).is_file() {
                ids.insert(name);
            }
        }
    }
    Ok(ids)
}

/// Reads the fps recorded by [`run_tracker`], if any.
fn recorded_fps(results: &Path) -> Option<f64> {
    let text = fs::read_to_string(results.join(TIMING_FILE)).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("fps="))
        .and_then(|v| v.trim().parse().ok())
}

/// Scores a results directory against a dataset and writes the report into
/// `out`.
pub fn evaluate(results: &Path, data: &Path, out: &Path) -> Result<MetricReport> {
    let ids = result_ids(results)?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset(results.to_path_buf()));
    }
    let sequences = list_sequences(data)?;
    let data_ids: BTreeSet<String> = sequences.iter().map(|s| s.id.clone()).collect();
    let mismatched: Vec<String> = ids.symmetric_difference(&data_ids).cloned().collect();
    if !mismatched.is_empty() {
        return Err(Error::SequenceMismatch(mismatched));
    }
    let per_seq = sequences
        .iter()
        .map(|seq| {
            let pred = read_boxes(&results.join(&seq.id).join(format!("{}.txt", seq.id)))?;
            SequenceResult::new(seq.id.clone(), &pred, &seq.groundtruth()?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::compute(&per_seq)?;
    report.fps = recorded_fps(results);
    report.write(out)?;
    let mut per = String::from("sequence,frames,ao\n");
    for r in &per_seq {
        let ious = r.ious();
        writeln!(per, "{},{},{:.6}", r.id, ious.len(), ious.iter().sum::<f64>() / ious.len() as f64)
            .expect("string write");
    }
    let p = out.join("per_sequence.csv");
    fs::write(&p, per).map_err(Error::io(&p))?;
    Ok(report)
}
