//! Training objective: classification cross-entropy, center-ness loss and IoU
//! regression loss, combined as `cls + λ1·cen + λ2·reg`.

use crate::autograd::{Exec, Tape, Var};
use crate::error::{Error, Result};
use crate::head::HeadOutput;
use crate::targets::{require_positive, RegressionTarget};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Center-ness weight.
    pub lambda1: f64,
    /// Regression weight.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub cls_loss: f64,
    /// Mean over foreground cells of `KL(C ‖ sigmoid(logit))`. This is the
    /// binary cross-entropy against the soft center-ness target minus the
    /// target's own entropy, so it has the same gradient and reaches zero at
    /// the optimum.
    pub cen_loss: f64,
    /// Mean over foreground cells of the entropy of the center-ness target.
    /// `cen_loss + cen_target_entropy` is the plain cross-entropy value.
    pub cen_target_entropy: f64,
    pub reg_loss: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub positives: usize,
    /// Set when no cell is foreground; `cen_loss` and `reg_loss` are then 0.
    pub no_foreground: bool,
}

/// Per-map gradients of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub cls: Tensor,
    pub reg: Tensor,
    pub cen: Tensor,
}

/// `-ln(IoU)` between two boxes given as `(l, t, r, b)` distances from the
/// same point.
pub fn iou_loss(pred: [f64; 4], target: [f64; 4]) -> Result<f64> {
    require_positive(pred)?;
    require_positive(target)?;
    Ok(iou_loss_and_grad(pred, target).0)
}

fn iou_loss_and_grad(p: [f64; 4], g: [f64; 4]) -> (f64, [f64; 4]) {
    let [l, t, r, b] = p;
    let [gl, gt, gr, gb] = g;
    let iw = l.min(gl) + r.min(gr);
    let ih = t.min(gt) + b.min(gb);
    let inter = iw * ih;
    let pred_area = (l + r) * (t + b);
    let union = pred_area + (gl + gr) * (gt + gb) - inter;
    let loss = union.ln() - inter.ln();

    let di = [
        if l < gl { ih } else { 0.0 },
        if t < gt { iw } else { 0.0 },
        if r < gr { ih } else { 0.0 },
        if b < gb { iw } else { 0.0 },
    ];
    let da = [t + b, l + r, t + b, l + r];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        grad[k] = (da[k] - di[k]) / union - di[k] / inter;
    }
    (loss, grad)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn check_shapes(out: &HeadOutput, target: &RegressionTarget, cen_gt: &Tensor) -> Result<(usize, usize)> {
    let (c, h, w) = out.cls.dims3()?;
    let expect = |t: &Tensor, ch: usize, what: &str| -> Result<()> {
        if t.shape() != [ch, h, w] {
            return Err(Error::shape(format!(
                "{what} has shape {:?}, expected [{ch}, {h}, {w}]",
                t.shape()
            )));
        }
        Ok(())
    };
    if c != 2 {
        return Err(Error::shape("classification map needs 2 channels"));
    }
    expect(&out.reg, 4, "regression map")?;
    expect(&out.cen, 1, "center-ness map")?;
    expect(&target.dist, 4, "regression target")?;
    expect(&target.mask, 1, "mask")?;
    expect(cen_gt, 1, "center-ness target")?;
    Ok((h, w))
}

/// Loss value and its gradient with respect to the three head maps.
pub fn total_loss_with_grad(
    out: &HeadOutput,
    target: &RegressionTarget,
    cen_gt: &Tensor,
    weights: LossWeights,
) -> Result<(LossBundle, HeadGrads)> {
    let (h, w) = check_shapes(out, target, cen_gt)?;
    let n = h * w;
    for (t, what) in [(&out.cls, "cls logits"), (&out.reg, "reg map"), (&out.cen, "cen logits")] {
        if !t.all_finite() {
            return Err(Error::NonFinite(what));
        }
    }

    let z = out.cls.data();
    let mut gcls = vec![0.0; 2 * n];
    let mut cls_sum = 0.0;
    for i in 0..n {
        let (bg, fg) = (z[i], z[n + i]);
        let m = bg.max(fg);
        let lse = m + (-(bg - fg).abs()).exp().ln_1p();
        let positive = target.is_positive(i);
        cls_sum += lse - if positive { fg } else { bg };
        let p_fg = (fg - lse).exp();
        let p_bg = (bg - lse).exp();
        let y_fg = if positive { 1.0 } else { 0.0 };
        gcls[i] = (p_bg - (1.0 - y_fg)) / n as f64;
        gcls[n + i] = (p_fg - y_fg) / n as f64;
    }
    let cls_loss = cls_sum / n as f64;

    let positives = target.positives();
    let mut greg = vec![0.0; 4 * n];
    let mut gcen = vec![0.0; n];
    let (mut reg_sum, mut cen_sum, mut ent_sum) = (0.0, 0.0, 0.0);
    if positives > 0 {
        let m = positives as f64;
        let reg = out.reg.data();
        let cen = out.cen.data();
        let cgt = cen_gt.data();
        for i in 0..n {
            if !target.is_positive(i) {
                continue;
            }
            let pred = [reg[i], reg[n + i], reg[2 * n + i], reg[3 * n + i]];
            let tgt = target.distances_at(i);
            require_positive(pred)?;
            require_positive(tgt)?;
            let (l, g) = iou_loss_and_grad(pred, tgt);
            reg_sum += l;
            for k in 0..4 {
                greg[k * n + i] = weights.lambda2 * g[k] / m;
            }

            let c = cgt[i];
            let zc = cen[i];
            let bce = c * softplus(-zc) + (1.0 - c) * softplus(zc);
            let entropy = -(xlogx(c) + xlogx(1.0 - c));
            cen_sum += bce - entropy;
            ent_sum += entropy;
            gcen[i] = weights.lambda1 * (sigmoid(zc) - c) / m;
        }
        reg_sum /= m;
        cen_sum /= m;
        ent_sum /= m;
    } else {
        log::warn!("no foreground cells in view; regression and center-ness terms set to 0");
    }
    let cen_loss = cen_sum.max(0.0);
    let reg_loss = reg_sum;
    let bundle = LossBundle {
        cls_loss,
        cen_loss,
        cen_target_entropy: ent_sum,
        reg_loss,
        total: cls_loss + weights.lambda1 * cen_loss + weights.lambda2 * reg_loss,
        lambda1: weights.lambda1,
        lambda2: weights.lambda2,
        positives,
        no_foreground: positives == 0,
    };
    let shape = |c: usize| vec![c, h, w];
    Ok((
        bundle,
        HeadGrads {
            cls: Tensor::new(shape(2), gcls)?,
            reg: Tensor::new(shape(4), greg)?,
            cen: Tensor::new(shape(1), gcen)?,
        },
    ))
}

pub fn total_loss(
    out: &HeadOutput,
    target: &RegressionTarget,
    cen_gt: &Tensor,
    weights: LossWeights,
) -> Result<LossBundle> {
    total_loss_with_grad(out, target, cen_gt, weights).map(|(b, _)| b)
}

/// Adds the total loss to `tape` as a scalar node over the head maps.
pub fn record_total_loss(
    tape: &mut Tape,
    out: &HeadOutput<Var>,
    target: &RegressionTarget,
    cen_gt: &Tensor,
    weights: LossWeights,
) -> Result<(Var, LossBundle)> {
    let values = HeadOutput {
        cls: tape.value(&out.cls).clone(),
        reg: tape.value(&out.reg).clone(),
        cen: tape.value(&out.cen).clone(),
    };
    let (bundle, grads) = total_loss_with_grad(&values, target, cen_gt, weights)?;
    let node = tape.scalar(
        bundle.total,
        &[out.cls, out.reg, out.cen],
        vec![grads.cls, grads.reg, grads.cen],
    )?;
    Ok((node, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::targets::{centerness_score, encode_targets, Grid};
    use crate::tensor::finite_diff_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iou_loss_examples() {
        assert_eq!(iou_loss([2.0, 2.0, 2.0, 2.0], [2.0, 2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(iou_loss([1.5, 3.0, 2.5, 0.5], [1.5, 3.0, 2.5, 0.5]).unwrap(), 0.0);
        let l = iou_loss([1.0, 2.0, 3.0, 2.0], [2.0, 2.0, 2.0, 2.0]).unwrap();
        assert!((l + 0.6f64.ln()).abs() < 1e-12);
        assert!((l - 0.5108).abs() < 1e-4);
        assert!(matches!(
            iou_loss([0.0, 1.0, 1.0, 1.0], [1.0; 4]),
            Err(Error::NonPositiveDistance(_))
        ));
    }

    fn instance(seed: u64) -> (HeadOutput, RegressionTarget, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new(8, 8, 128);
        let gt = BBox::new(30.5, 41.0, 91.0, 88.5);
        let target = encode_targets(&gt, &grid).unwrap();
        let cen_gt = centerness_score(&target);
        let out = HeadOutput {
            cls: Tensor::from_fn([2, 8, 8], |_| rng.gen_range(-2.0..2.0)),
            reg: Tensor::from_fn([4, 8, 8], |_| rng.gen_range(3.0..50.0)),
            cen: Tensor::from_fn([1, 8, 8], |_| rng.gen_range(-2.0..2.0)),
        };
        (out, target, cen_gt)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (out, target, cen_gt) = instance(7);
        let w = LossWeights::default();
        let (_, g) = total_loss_with_grad(&out, &target, &cen_gt, w).unwrap();
        let f_cls = finite_diff_grad(
            |c| total_loss(&HeadOutput { cls: c.clone(), ..out.clone() }, &target, &cen_gt, w).unwrap().total,
            &out.cls,
            1e-4,
        );
        let f_reg = finite_diff_grad(
            |r| total_loss(&HeadOutput { reg: r.clone(), ..out.clone() }, &target, &cen_gt, w).unwrap().total,
            &out.reg,
            1e-4,
        );
        let f_cen = finite_diff_grad(
            |c| total_loss(&HeadOutput { cen: c.clone(), ..out.clone() }, &target, &cen_gt, w).unwrap().total,
            &out.cen,
            1e-4,
        );
        assert!(g.cls.rel_error(&f_cls).unwrap() < 1e-6);
        assert!(g.reg.rel_error(&f_reg).unwrap() < 1e-6);
        assert!(g.cen.rel_error(&f_cen).unwrap() < 1e-6);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let (mut out, target, cen_gt) = instance(1);
        out.cls = Tensor::zeros([2, 8, 8]);
        let b = total_loss(&out, &target, &cen_gt, LossWeights::default()).unwrap();
        assert!((b.cls_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let (mut out, target, cen_gt) = instance(2);
        let n = 64;
        out.reg = Tensor::from_fn([4, 8, 8], |i| {
            let idx = i % n;
            if target.is_positive(idx) {
                target.dist.data()[i]
            } else {
                1.0
            }
        });
        out.cen = cen_gt.map(|c| {
            let c = c.clamp(1e-15, 1.0 - 1e-15);
            (c / (1.0 - c)).ln().clamp(-40.0, 40.0)
        });
        out.cls = Tensor::from_fn([2, 8, 8], |i| {
            let fg = target.is_positive(i % n);
            let is_fg_channel = i >= n;
            if fg == is_fg_channel { 30.0 } else { -30.0 }
        });
        let b = total_loss(&out, &target, &cen_gt, LossWeights::default()).unwrap();
        assert_eq!(b.reg_loss, 0.0);
        assert!(b.cen_loss < 1e-6);
        assert!(b.cls_loss < 1e-20);
        assert!(b.total < 1e-6);
        assert!(b.cen_target_entropy > 0.0);
    }

    #[test]
    fn no_foreground_flags() {
        let (out, _, _) = instance(3);
        let target = encode_targets(&BBox::new(0.0, 0.0, 5.0, 5.0), &Grid::new(8, 8, 128)).unwrap();
        let cen_gt = centerness_score(&target);
        let b = total_loss(&out, &target, &cen_gt, LossWeights::default()).unwrap();
        assert!(b.no_foreground);
        assert_eq!(b.reg_loss, 0.0);
        assert_eq!(b.cen_loss, 0.0);
        assert_eq!(b.total, b.cls_loss);
    }

    #[test]
    fn total_is_linear_in_weights() {
        let (out, target, cen_gt) = instance(4);
        let a = total_loss(&out, &target, &cen_gt, LossWeights { lambda1: 0.5, lambda2: 2.0 }).unwrap();
        assert_eq!(a.total, a.cls_loss + 0.5 * a.cen_loss + 2.0 * a.reg_loss);
    }

    #[test]
    fn shape_mismatch() {
        let (mut out, target, cen_gt) = instance(5);
        out.reg = Tensor::zeros([4, 7, 8]);
        assert!(total_loss(&out, &target, &cen_gt, LossWeights::default()).is_err());
    }
}
