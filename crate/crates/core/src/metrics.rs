//! Overlap and center-error metrics over tracked sequences.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bbox::BBox;
use crate::config::write_key_values;
use crate::error::{Error, Result};

/// Thresholds sampled by the success curve.
pub const SUCCESS_STEPS: usize = 101;
/// Center-error thresholds (pixels) sampled by the precision curve.
pub const PRECISION_STEPS: usize = 51;
pub const DEFAULT_PRECISION_PX: f64 = 20.0;

/// Intersection over union; 0 when either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if !a.is_well_formed() || !b.is_well_formed() {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub id: String,
    /// `(predicted, ground truth)` per frame.
    pub frames: Vec<(BBox, BBox)>,
}

impl SequenceResult {
    pub fn new(id: impl Into<String>, predicted: &[BBox], truth: &[BBox]) -> Result<Self> {
        let id = id.into();
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!(
                "sequence {id}: {} predictions for {} ground-truth frames",
                predicted.len(),
                truth.len()
            )));
        }
        if predicted.is_empty() {
            return Err(Error::shape(format!("sequence {id} has no frames")));
        }
        for gt in truth {
            gt.require_well_formed()?;
        }
        Ok(SequenceResult {
            id,
            frames: predicted.iter().copied().zip(truth.iter().copied()).collect(),
        })
    }

    pub fn ious(&self) -> Vec<f64> {
        self.frames.iter().map(|(p, g)| iou(p, g)).collect()
    }

    pub fn center_errors(&self) -> Vec<f64> {
        self.frames.iter().map(|(p, g)| center_distance(p, g)).collect()
    }
}

fn all_ious(results: &[SequenceResult]) -> Vec<f64> {
    results.iter().flat_map(SequenceResult::ious).collect()
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Mean IoU over every frame of every sequence.
pub fn average_overlap(results: &[SequenceResult]) -> f64 {
    mean(&all_ious(results))
}

/// Mean over sequences of each sequence's mean IoU.
pub fn average_overlap_per_sequence(results: &[SequenceResult]) -> f64 {
    let per: Vec<f64> = results.iter().map(|r| mean(&r.ious())).collect();
    mean(&per)
}

/// Fraction of frames whose IoU strictly exceeds `threshold`.
pub fn success_rate(results: &[SequenceResult], threshold: f64) -> f64 {
    fraction(&all_ious(results), |v| v > threshold)
}

/// Success rate at each of the evenly spaced thresholds `0.00..=1.00`.
pub fn success_curve(results: &[SequenceResult]) -> Vec<(f64, f64)> {
    let ious = all_ious(results);
    (0..SUCCESS_STEPS)
        .map(|i| {
            let t = i as f64 / (SUCCESS_STEPS - 1) as f64;
            (t, fraction(&ious, |v| v > t))
        })
        .collect()
}

/// Mean of the success curve.
pub fn success_auc(results: &[SequenceResult]) -> f64 {
    let curve = success_curve(results);
    curve.iter().map(|(_, r)| r).sum::<f64>() / curve.len() as f64
}

/// Fraction of frames whose center error is at most `pixels`.
pub fn precision_at(results: &[SequenceResult], pixels: f64) -> f64 {
    let errs: Vec<f64> = results.iter().flat_map(SequenceResult::center_errors).collect();
    fraction(&errs, |d| d <= pixels)
}

/// Precision at integer pixel thresholds `0..PRECISION_STEPS`.
pub fn precision_curve(results: &[SequenceResult]) -> Vec<(f64, f64)> {
    let errs: Vec<f64> = results.iter().flat_map(SequenceResult::center_errors).collect();
    (0..PRECISION_STEPS)
        .map(|i| {
            let t = i as f64;
            (t, fraction(&errs, |d| d <= t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ao: f64,
    pub ao_per_sequence: f64,
    /// Success rate keyed by threshold in hundredths.
    pub sr: BTreeMap<u32, f64>,
    pub auc: f64,
    pub precision: f64,
    pub success_curve: Vec<(f64, f64)>,
    pub precision_curve: Vec<(f64, f64)>,
    pub sequences: usize,
    pub frames: usize,
    /// Frames per second over timed tracking calls, when known.
    pub fps: Option<f64>,
}

impl MetricReport {
    pub fn compute(results: &[SequenceResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::shape("no sequences to evaluate"));
        }
        let sr = [50, 75]
            .into_iter()
            .map(|t| (t, success_rate(results, t as f64 / 100.0)))
            .collect();
        Ok(MetricReport {
            ao: average_overlap(results),
            ao_per_sequence: average_overlap_per_sequence(results),
            sr,
            auc: success_auc(results),
            precision: precision_at(results, DEFAULT_PRECISION_PX),
            success_curve: success_curve(results),
            precision_curve: precision_curve(results),
            sequences: results.len(),
            frames: results.iter().map(|r| r.frames.len()).sum(),
            fps: None,
        })
    }

    pub fn sr(&self, hundredths: u32) -> Option<f64> {
        self.sr.get(&hundredths).copied()
    }

    /// Deterministic `key=value` summary; timing is kept out of it.
    pub fn to_kv(&self) -> String {
        let mut pairs = vec![
            ("sequences", self.sequences.to_string()),
            ("frames", self.frames.to_string()),
            ("ao", format!("{:.6}", self.ao)),
            ("ao_per_sequence", format!("{:.6}", self.ao_per_sequence)),
        ];
        let sr: Vec<(String, String)> = self
            .sr
            .iter()
            .map(|(t, v)| (format!("sr_{:.2}", *t as f64 / 100.0), format!("{v:.6}")))
            .collect();
        pairs.push(("success_auc", format!("{:.6}", self.auc)));
        pairs.push(("precision_20px", format!("{:.6}", self.precision)));
        pairs.push(("sr_rule", "iou > threshold".to_string()));
        pairs.push(("success_curve_rule", "iou > threshold".to_string()));
        pairs.push(("precision_rule", "center error <= threshold".to_string()));
        let mut out = write_key_values(pairs);
        out.push_str(&write_key_values(sr.iter().map(|(k, v)| (k.as_str(), v.clone()))));
        out
    }

    /// Writes `report.txt`, `success.csv`, `precision.csv` and, if known,
    /// `fps.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(Error::io(&p))
        };
        put("report.txt", self.to_kv())?;
        put("success.csv", curve_csv("threshold,success_rate", &self.success_curve))?;
        put("precision.csv", curve_csv("pixels,precision", &self.precision_curve))?;
        if let Some(fps) = self.fps {
            put("fps.txt", format!("fps={fps:.3}\n"))?;
        }
        Ok(())
    }
}

fn curve_csv(header: &str, curve: &[(f64, f64)]) -> String {
    let mut s = format!("{header}\n");
    for (t, v) in curve {
        writeln!(s, "{t:.2},{v:.6}").expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_with_ious(ious: &[f64]) -> SequenceResult {
        // a prefix of the 100-wide truth box has IoU equal to its width / 100
        let gt = BBox::new(0.0, 0.0, 100.0, 1.0);
        let pred: Vec<BBox> = ious
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    BBox::new(200.0, 0.0, 201.0, 1.0)
                } else {
                    BBox::new(0.0, 0.0, 100.0 * v, 1.0)
                }
            })
            .collect();
        SequenceResult::new("s", &pred, &vec![gt; ious.len()]).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &BBox::new(2.0, 0.0, 6.0, 4.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::new(10.0, 10.0, 12.0, 12.0)), 0.0);
        assert_eq!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)), 0.0);
    }

    #[test]
    fn ao_and_sr_examples() {
        let r = [seq_with_ious(&[1.0, 0.5, 0.0])];
        assert!((average_overlap(&r) - 0.5).abs() < 1e-12);
        assert!((success_rate(&r, 0.5) - 1.0 / 3.0).abs() < 1e-15);
        let r = [seq_with_ious(&[0.8, 0.76, 0.7])];
        assert!((success_rate(&r, 0.75) - 2.0 / 3.0).abs() < 1e-15);
        let r = [seq_with_ious(&[0.3, 0.9])];
        assert_eq!(success_rate(&r, 0.0), 1.0);
    }

    #[test]
    fn auc_saturation() {
        let r = [seq_with_ious(&[1.0, 1.0])];
        assert!((success_auc(&r) - 100.0 / 101.0).abs() < 1e-15);
        let r = [seq_with_ious(&[0.0, 0.0])];
        assert_eq!(success_auc(&r), 0.0);
    }

    #[test]
    fn precision_examples() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mk = |d: f64| gt.translate(d, 0.0);
        let r = [SequenceResult::new("p", &[mk(5.0), mk(15.0), mk(30.0)], &[gt; 3]).unwrap()];
        assert!((precision_at(&r, 20.0) - 2.0 / 3.0).abs() < 1e-15);
        let r = [SequenceResult::new("p", &[mk(25.0); 2], &[gt; 2]).unwrap()];
        assert_eq!(precision_at(&r, 20.0), 0.0);
        let r = [SequenceResult::new("p", &[gt; 2], &[gt; 2]).unwrap()];
        assert_eq!(precision_at(&r, 0.5), 1.0);
    }

    #[test]
    fn ao_per_sequence_differs() {
        let r = [seq_with_ious(&[1.0]), seq_with_ious(&[0.0, 0.0, 0.0])];
        assert!((average_overlap(&r) - 0.25).abs() < 1e-12);
        assert!((average_overlap_per_sequence(&r) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let g = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert!(SequenceResult::new("x", &[g], &[g, g]).is_err());
        assert!(SequenceResult::new("x", &[], &[]).is_err());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = MetricReport::compute(&[seq_with_ious(&[1.0, 0.5, 0.0])]).unwrap();
        rep.fps = Some(12.5);
        rep.write(dir.path()).unwrap();
        let txt = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(txt.contains("sr_0.50=0.333333"));
        assert!(!txt.contains("fps"));
        let csv = fs::read_to_string(dir.path().join("success.csv")).unwrap();
        assert_eq!(csv.lines().count(), SUCCESS_STEPS + 1);
        assert!(dir.path().join("fps.txt").exists());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn success_monotone(pairs in proptest::collection::vec((arb_box(), arb_box()), 1..30)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = [SequenceResult::new("s", &p, &g).unwrap()];
            let curve = success_curve(&r);
            for w in curve.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
            }
            let auc = success_auc(&r);
            prop_assert!((0.0..=1.0).contains(&auc));
        }

        #[test]
        fn ao_concatenation_is_weighted_mean(
            a in proptest::collection::vec((arb_box(), arb_box()), 1..20),
            b in proptest::collection::vec((arb_box(), arb_box()), 1..20),
        ) {
            let mk = |v: &Vec<(BBox, BBox)>| {
                let (p, g): (Vec<_>, Vec<_>) = v.iter().copied().unzip();
                SequenceResult::new("s", &p, &g).unwrap()
            };
            let (ra, rb) = (mk(&a), mk(&b));
            let both = average_overlap(&[ra.clone(), rb.clone()]);
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let weighted = (average_overlap(&[ra]) * na + average_overlap(&[rb]) * nb) / (na + nb);
            prop_assert!((both - weighted).abs() < 1e-12);
        }
    }
}
