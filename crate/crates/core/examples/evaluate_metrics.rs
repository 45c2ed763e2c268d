//! Overlap, success and precision metrics on hand-made predictions.

use siamcar::bbox::BBox;
use siamcar::metrics::{iou, precision_at, success_rate, MetricReport, SequenceResult};

fn main() -> anyhow::Result<()> {
    let gt = BBox::new(0.0, 0.0, 4.0, 4.0);
    println!("IoU of half-overlapping squares: {:.4}", iou(&gt, &BBox::new(2.0, 0.0, 6.0, 4.0)));

    let truth = vec![BBox::from_xywh(10.0, 10.0, 20.0, 20.0); 4];
    let pred: Vec<BBox> = [0.0, 3.0, 8.0, 30.0].iter().map(|d| truth[0].translate(*d, 0.0)).collect();
    let seq = SequenceResult::new("demo", &pred, &truth)?;
    let results = [seq];
    println!("SR(>0.5) = {:.3}", success_rate(&results, 0.5));
    println!("precision at 20px = {:.3}", precision_at(&results, 20.0));

    let report = MetricReport::compute(&results)?;
    let dir = tempfile::tempdir()?;
    report.write(dir.path())?;
    print!("{}", std::fs::read_to_string(dir.path().join("report.txt"))?);
    Ok(())
}
