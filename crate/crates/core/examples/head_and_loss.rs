//! Per-location targets, center-ness and the three-part training loss.

use siamcar::bbox::BBox;
use siamcar::head::HeadOutput;
use siamcar::loss::{iou_loss, total_loss, LossWeights};
use siamcar::targets::{centerness, centerness_score, encode_targets, Grid};
use siamcar::Tensor;

fn main() -> anyhow::Result<()> {
    let grid = Grid::new(9, 8, 128);
    let gt = BBox::new(40.0, 44.0, 92.0, 84.0);
    let target = encode_targets(&gt, &grid)?;
    println!("{} of {} cells fall inside the box", target.positives(), grid.cells());

    let center = 4 * 9 + 4;
    let d = target.distances_at(center);
    println!("center cell distances (l, t, r, b) = {d:?}, center-ness {:.3}", centerness(d));
    println!("reconstructed: {:?}", target.reconstruct(&grid, 4, 4));

    println!("IoU loss for a 20% too wide box: {:.4}", iou_loss([12.0, 10.0, 12.0, 10.0], [10.0; 4])?);

    // perfect regression, uniform classification
    let cen = centerness_score(&target);
    let logit = |c: f64| {
        let c = c.clamp(1e-12, 1.0 - 1e-12);
        (c / (1.0 - c)).ln()
    };
    let out = HeadOutput {
        cls: Tensor::zeros([2, 9, 9]),
        reg: Tensor::from_fn([4, 9, 9], |i| {
            let (k, cell) = (i / 81, i % 81);
            if target.is_positive(cell) {
                target.distances_at(cell)[k]
            } else {
                1.0
            }
        }),
        cen: cen.map(logit),
    };
    let b = total_loss(&out, &target, &cen, LossWeights::default())?;
    println!(
        "cls {:.6} (ln 2 = {:.6}), cen {:.2e}, reg {:.2e}, total {:.6}",
        b.cls_loss,
        std::f64::consts::LN_2,
        b.cen_loss,
        b.reg_loss,
        b.total
    );
    Ok(())
}
