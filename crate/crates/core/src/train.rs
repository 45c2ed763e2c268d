//! Desk-scale training: template/search pairs cut from the same sequence,
//! SGD with momentum on the total loss, backbone frozen for the first epochs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::bbox::BBox;
use crate::config::{write_key_values, KeyValues};
use crate::dataset::{list_sequences, SequenceDir};
use crate::error::{Error, Result};
use crate::image::{channel_means, context_side, crop_resize};
use crate::loss::{record_total_loss, total_loss, LossBundle, LossWeights};
use crate::model::{ModelConfig, SiamCarNet};
use crate::targets::{centerness_score, encode_targets, RegressionTarget};
use crate::tensor::Tensor;

pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const SUMMARY_FILE: &str = "train_summary.txt";
pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs during which backbone parameters receive no update.
    pub freeze_epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Largest displacement (search-region pixels) of the target from the
    /// search-crop center.
    pub max_shift: f64,
    /// Relative jitter of the search-crop side.
    pub scale_jitter: f64,
    /// Largest frame distance between template and search frames; 0 means
    /// anywhere in the sequence.
    pub max_frame_gap: usize,
    /// Gradient-norm ceiling per step; 0 disables clipping.
    pub clip: f64,
    /// Fixed pairs scored before and after training.
    pub probe_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            freeze_epochs: 2,
            steps_per_epoch: 50,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 8,
            lambda1: 1.0,
            lambda2: 3.0,
            seed: 42,
            max_shift: 24.0,
            scale_jitter: 0.3,
            max_frame_gap: 0,
            clip: 10.0,
            probe_pairs: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.freeze_epochs > self.epochs {
            return bad("freeze_epochs must not exceed epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.scale_jitter) || self.max_shift < 0.0 || self.clip < 0.0 {
            return bad("scale_jitter must be in [0, 1), max_shift and clip non-negative");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: kv.get("epochs", d.epochs)?,
            freeze_epochs: kv.get("freeze_epochs", d.freeze_epochs)?,
            steps_per_epoch: kv.get("steps_per_epoch", d.steps_per_epoch)?,
            lr: kv.get("lr", d.lr)?,
            momentum: kv.get("momentum", d.momentum)?,
            batch_size: kv.get("batch_size", d.batch_size)?,
            lambda1: kv.get("lambda1", d.lambda1)?,
            lambda2: kv.get("lambda2", d.lambda2)?,
            seed: kv.get("seed", d.seed)?,
            max_shift: kv.get("max_shift", d.max_shift)?,
            scale_jitter: kv.get("scale_jitter", d.scale_jitter)?,
            max_frame_gap: kv.get("max_frame_gap", d.max_frame_gap)?,
            clip: kv.get("clip", d.clip)?,
            probe_pairs: kv.get("probe_pairs", d.probe_pairs)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        write_key_values([
            ("epochs", self.epochs.to_string()),
            ("freeze_epochs", self.freeze_epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("seed", self.seed.to_string()),
            ("max_shift", self.max_shift.to_string()),
            ("scale_jitter", self.scale_jitter.to_string()),
            ("max_frame_gap", self.max_frame_gap.to_string()),
            ("clip", self.clip.to_string()),
            ("probe_pairs", self.probe_pairs.to_string()),
        ])
    }
}

/// One training example with its supervision.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub template: Tensor,
    pub search: Tensor,
    /// Target box in search-region pixels.
    pub target_box: BBox,
    pub target: RegressionTarget,
    pub centerness: Tensor,
}

/// Crops a template patch around `gt` and a search patch around the same
/// target in another frame, displaced from the crop center by `shift`
/// (search-region pixels) and with its side scaled by `side_scale`.
pub fn make_pair(
    config: &ModelConfig,
    template_frame: &Tensor,
    template_gt: BBox,
    search_frame: &Tensor,
    search_gt: BBox,
    shift: (f64, f64),
    side_scale: f64,
) -> Result<TrainingPair> {
    template_gt.require_well_formed()?;
    search_gt.require_well_formed()?;
    let (tw, th) = template_gt.size();
    let template = crop_resize(
        template_frame,
        template_gt.center(),
        context_side(tw, th),
        config.template_size,
        channel_means(template_frame)?,
    )?;

    let s = config.search_size as f64;
    let (sw, sh) = search_gt.size();
    let side = context_side(sw, sh) * s / config.template_size as f64 * side_scale;
    let scale = s / side;
    let (gx, gy) = search_gt.center();
    let center = (gx - shift.0 / scale, gy - shift.1 / scale);
    let search = crop_resize(search_frame, center, side, config.search_size, channel_means(search_frame)?)?;
    let map = |x: f64, y: f64| ((x - center.0) * scale + s / 2.0, (y - center.1) * scale + s / 2.0);
    let (x0, y0) = map(search_gt.x0, search_gt.y0);
    let (x1, y1) = map(search_gt.x1, search_gt.y1);
    let target_box = BBox::new(x0, y0, x1, y1);
    let grid = config.grid()?;
    let target = encode_targets(&target_box, &grid)?;
    let centerness = centerness_score(&target);
    Ok(TrainingPair {
        template,
        search,
        target_box,
        target,
        centerness,
    })
}

struct LoadedSequence {
    seq: SequenceDir,
    gt: Vec<BBox>,
}

/// Draws training pairs from a dataset directory.
pub struct PairSampler {
    sequences: Vec<LoadedSequence>,
    config: ModelConfig,
    max_shift: f64,
    scale_jitter: f64,
    max_frame_gap: usize,
}

impl PairSampler {
    pub fn open(root: &Path, config: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let sequences = list_sequences(root)?
            .into_iter()
            .map(|seq| {
                let gt = seq.groundtruth()?;
                Ok(LoadedSequence { seq, gt })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairSampler {
            sequences,
            config: config.clone(),
            max_shift: train.max_shift,
            scale_jitter: train.scale_jitter,
            max_frame_gap: train.max_frame_gap,
        })
    }

    pub fn sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<TrainingPair> {
        let s = &self.sequences[rng.gen_range(0..self.sequences.len())];
        let n = s.gt.len();
        let t = rng.gen_range(0..n);
        let (lo, hi) = if self.max_frame_gap == 0 {
            (0, n - 1)
        } else {
            (t.saturating_sub(self.max_frame_gap), (t + self.max_frame_gap).min(n - 1))
        };
        let u = rng.gen_range(lo..=hi);
        let shift = if self.max_shift > 0.0 {
            (
                rng.gen_range(-self.max_shift..=self.max_shift),
                rng.gen_range(-self.max_shift..=self.max_shift),
            )
        } else {
            (0.0, 0.0)
        };
        let side_scale = if self.scale_jitter > 0.0 {
            1.0 + rng.gen_range(-self.scale_jitter..=self.scale_jitter)
        } else {
            1.0
        };
        let zf = s.seq.frame(t)?;
        let xf = if u == t { zf.clone() } else { s.seq.frame(u)? };
        make_pair(&self.config, &zf, s.gt[t], &xf, s.gt[u], shift, side_scale)
    }
}

/// Mean loss of `net` over `pairs`, without gradients.
pub fn evaluate_pairs(net: &SiamCarNet, pairs: &[TrainingPair], weights: LossWeights) -> Result<LossBundle> {
    let mut acc: Option<LossBundle> = None;
    for p in pairs {
        let zf = net.template_features(&p.template)?;
        let out = net.predict(&zf, &p.search)?;
        let b = total_loss(&out, &p.target, &p.centerness, weights)?;
        acc = Some(match acc {
            None => b,
            Some(mut a) => {
                a.cls_loss += b.cls_loss;
                a.cen_loss += b.cen_loss;
                a.cen_target_entropy += b.cen_target_entropy;
                a.reg_loss += b.reg_loss;
                a.total += b.total;
                a.positives += b.positives;
                a.no_foreground |= b.no_foreground;
                a
            }
        });
    }
    let mut a = acc.ok_or_else(|| Error::shape("no pairs to evaluate"))?;
    let k = pairs.len() as f64;
    a.cls_loss /= k;
    a.cen_loss /= k;
    a.cen_target_entropy /= k;
    a.reg_loss /= k;
    a.total /= k;
    Ok(a)
}

/// Loss, gradient and bookkeeping for one pair.
pub fn pair_gradients(
    net: &SiamCarNet,
    pair: &TrainingPair,
    weights: LossWeights,
    freeze_backbone: bool,
) -> Result<(LossBundle, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    if freeze_backbone {
        tape.freeze_prefix(BACKBONE_PREFIX);
    }
    let out = net.forward(&mut tape, pair.template.clone(), pair.search.clone())?;
    let (loss, bundle) = record_total_loss(&mut tape, &out, &pair.target, &pair.centerness, weights)?;
    tape.backward(loss)?;
    let grads = net
        .params()
        .iter()
        .map(|(name, _)| tape.param_grad(name).cloned())
        .collect();
    Ok((bundle, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub frozen: bool,
    pub loss: LossBundle,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SiamCarNet,
    pub log: Vec<StepRecord>,
    pub probe_initial: Option<LossBundle>,
    pub probe_final: Option<LossBundle>,
}

impl TrainOutcome {
    /// Relative drop of the probe loss, in `[0, 1]` when training helped.
    pub fn probe_reduction(&self) -> Option<f64> {
        match (self.probe_initial, self.probe_final) {
            (Some(a), Some(b)) => Some(1.0 - b.total / a.total),
            _ => None,
        }
    }
}

/// Runs SGD with momentum for `config.total_steps()` steps.
pub fn train_net(
    mut net: SiamCarNet,
    sampler: &PairSampler,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let weights = config.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
    probe_rng.set_stream(1);
    let probes = (0..config.probe_pairs)
        .map(|_| sampler.sample(&mut probe_rng))
        .collect::<Result<Vec<_>>>()?;
    let probe_initial = if probes.is_empty() {
        None
    } else {
        Some(evaluate_pairs(&net, &probes, weights)?)
    };

    let mut velocity: Vec<Tensor> = net
        .params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mut log = Vec::with_capacity(config.total_steps());
    for step in 0..config.total_steps() {
        let epoch = step / config.steps_per_epoch.max(1);
        let frozen = epoch < config.freeze_epochs;
        let mut sum: Vec<Option<Tensor>> = vec![None; velocity.len()];
        let mut losses = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let pair = sampler.sample(&mut rng)?;
            let (bundle, grads) = pair_gradients(&net, &pair, weights, frozen)?;
            if !bundle.total.is_finite() {
                return Err(Error::Diverged { step, loss: bundle.total });
            }
            losses.push(bundle);
            for (acc, g) in sum.iter_mut().zip(grads) {
                if let Some(g) = g {
                    match acc {
                        None => *acc = Some(g),
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                    }
                }
            }
        }
        let k = config.batch_size as f64;
        let grad_norm = sum
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|v| (v / k) * (v / k)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        let clip = if config.clip > 0.0 && grad_norm > config.clip {
            config.clip / grad_norm
        } else {
            1.0
        };
        for (((_, p), v), g) in net.params_mut().into_iter().zip(&mut velocity).zip(&sum) {
            let Some(g) = g else { continue };
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = config.momentum * *vv + gv / k * clip;
                *pv -= config.lr * *vv;
            }
        }
        let mean = mean_bundle(&losses);
        if step % 50 == 0 {
            info!(
                "step {step} epoch {epoch}{} loss {:.4} (cls {:.4} cen {:.4} reg {:.4}) |g| {grad_norm:.3}",
                if frozen { " frozen" } else { "" },
                mean.total,
                mean.cls_loss,
                mean.cen_loss,
                mean.reg_loss
            );
        }
        debug!("step {step} loss {:.6}", mean.total);
        log.push(StepRecord {
            step,
            epoch,
            frozen,
            loss: mean,
            grad_norm,
        });
    }
    let probe_final = if probes.is_empty() {
        None
    } else {
        Some(evaluate_pairs(&net, &probes, weights)?)
    };
    Ok(TrainOutcome {
        net,
        log,
        probe_initial,
        probe_final,
    })
}

fn mean_bundle(v: &[LossBundle]) -> LossBundle {
    let k = v.len() as f64;
    let mut m = v[0];
    m.cls_loss = v.iter().map(|b| b.cls_loss).sum::<f64>() / k;
    m.cen_loss = v.iter().map(|b| b.cen_loss).sum::<f64>() / k;
    m.cen_target_entropy = v.iter().map(|b| b.cen_target_entropy).sum::<f64>() / k;
    m.reg_loss = v.iter().map(|b| b.reg_loss).sum::<f64>() / k;
    m.total = v.iter().map(|b| b.total).sum::<f64>() / k;
    m.positives = v.iter().map(|b| b.positives).sum();
    m.no_foreground = v.iter().any(|b| b.no_foreground);
    m
}

pub fn loss_log_csv(log: &[StepRecord]) -> String {
    let mut s = String::from("step,epoch,frozen,total,cls,cen,reg,grad_norm\n");
    for r in log {
        writeln!(
            s,
            "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.step,
            r.epoch,
            u8::from(r.frozen),
            r.loss.total,
            r.loss.cls_loss,
            r.loss.cen_loss,
            r.loss.reg_loss,
            r.grad_norm
        )
        .expect("string write");
    }
    s
}

/// Trains on the sequences under `data` and writes the weights, the loss log
/// and a summary into `out`.
pub fn train(data: &Path, model: &ModelConfig, config: &TrainConfig, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let sampler = PairSampler::open(data, model, config)?;
    info!(
        "training on {} sequences for {} steps",
        sampler.sequences(),
        config.total_steps()
    );
    let net = SiamCarNet::init(model.clone(), config.seed)?;
    let outcome = train_net(net, &sampler, config)?;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    outcome.net.save(out)?;
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let p = out.join(name);
        fs::write(&p, body).map_err(Error::io(&p))?;
        Ok(p)
    };
    write(LOSS_LOG_FILE, loss_log_csv(&outcome.log))?;
    let mut summary = config.to_kv();
    if let (Some(a), Some(b)) = (outcome.probe_initial, outcome.probe_final) {
        summary.push_str(&write_key_values([
            ("probe_initial_total", format!("{:.9}", a.total)),
            ("probe_final_total", format!("{:.9}", b.total)),
        ]));
    }
    write(SUMMARY_FILE, summary)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, Motion, SyntheticSpec};

    fn corpus(frames: usize, sequences: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { frames, sequences, motion: Motion::Static, ..SyntheticSpec::default() };
        generate_corpus(&spec, dir.path()).unwrap();
        dir
    }

    #[test]
    fn centered_pair_puts_target_mid_crop() {
        let cfg = ModelConfig::default();
        let img = Tensor::full([3, 100, 100], 0.5);
        let gt = BBox::from_xywh(40.0, 30.0, 20.0, 20.0);
        let p = make_pair(&cfg, &img, gt, &img, gt, (0.0, 0.0), 1.0).unwrap();
        assert_eq!(p.target_box.center(), (64.0, 64.0));
        // 20 px target, 40 px context, 80 px search side mapped to 128
        assert!((p.target_box.width() - 32.0).abs() < 1e-12);
        let p = make_pair(&cfg, &img, gt, &img, gt, (8.0, -4.0), 1.0).unwrap();
        let c = p.target_box.center();
        assert!((c.0 - 72.0).abs() < 1e-12 && (c.1 - 60.0).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let data = corpus(1, 1);
        let model = ModelConfig::default();
        let cfg = TrainConfig {
            epochs: 2,
            freeze_epochs: 0,
            steps_per_epoch: 3,
            lr: 0.0,
            batch_size: 1,
            max_shift: 0.0,
            scale_jitter: 0.0,
            probe_pairs: 0,
            ..TrainConfig::default()
        };
        let out = tempfile::tempdir().unwrap();
        let o = train(data.path(), &model, &cfg, out.path()).unwrap();
        let first = o.log[0].loss.total;
        assert!(o.log.iter().all(|r| r.loss.total == first));
        let csv = fs::read_to_string(out.path().join(LOSS_LOG_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn frozen_backbone_is_untouched() {
        let data = corpus(4, 2);
        let model = ModelConfig::default();
        let cfg = TrainConfig {
            epochs: 2,
            freeze_epochs: 2,
            steps_per_epoch: 2,
            batch_size: 2,
            probe_pairs: 0,
            ..TrainConfig::default()
        };
        let out = tempfile::tempdir().unwrap();
        let o = train(data.path(), &model, &cfg, out.path()).unwrap();
        let init = SiamCarNet::init(model, cfg.seed).unwrap();
        let fresh = tempfile::tempdir().unwrap();
        init.save(fresh.path()).unwrap();
        for (name, _) in init.params() {
            let f = format!("{name}.tnsr");
            let same = fs::read(out.path().join(&f)).unwrap() == fs::read(fresh.path().join(&f)).unwrap();
            assert_eq!(same, name.starts_with(BACKBONE_PREFIX), "{name}");
        }
        assert_eq!(o.log.len(), 4);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { freeze_epochs: 11, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let kv = KeyValues::parse(&TrainConfig::default().to_kv(), "mem").unwrap();
        assert_eq!(TrainConfig::from_kv(&kv).unwrap(), TrainConfig::default());
    }
}
