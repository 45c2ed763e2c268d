//! Seeded synthetic sequences: a textured rectangle moving over a smooth
//! background with optional distractors, pixel noise and scale oscillation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bbox::BBox;
use crate::config::{write_key_values, KeyValues};
use crate::dataset::{frame_name, write_boxes, GROUNDTRUTH_FILE};
use crate::error::{Error, Result};
use crate::image::write_ppm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Static,
    Linear,
    /// Linear motion plus a sinusoidal change of size.
    Sinusoidal,
}

impl FromStr for Motion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "static" => Ok(Motion::Static),
            "linear" => Ok(Motion::Linear),
            "sinusoidal" => Ok(Motion::Sinusoidal),
            _ => Err(format!("unknown motion {s:?}; expected static, linear or sinusoidal")),
        }
    }
}

impl Motion {
    fn name(self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::Linear => "linear",
            Motion::Sinusoidal => "sinusoidal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub motion: Motion,
    /// Fixed per-frame displacement; random direction at `speed` when unset.
    pub velocity: Option<(f64, f64)>,
    pub speed: f64,
    /// Relative size amplitude for sinusoidal motion.
    pub scale_amplitude: f64,
    /// Frames per size oscillation.
    pub scale_period: f64,
    pub distractors: usize,
    /// Standard deviation of per-pixel Gaussian noise, in `[0, 1]` units.
    pub noise: f64,
    pub frames: usize,
    pub sequences: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 160,
            height: 160,
            min_size: 20,
            max_size: 32,
            motion: Motion::Linear,
            velocity: None,
            speed: 2.0,
            scale_amplitude: 0.2,
            scale_period: 40.0,
            distractors: 0,
            noise: 0.02,
            frames: 30,
            sequences: 1,
            seed: 42,
        }
    }
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected vx,vy, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.min_size < 2 || self.min_size > self.max_size {
            return bad("object sizes need 2 <= min_size <= max_size");
        }
        let largest = (self.max_size as f64 * (1.0 + self.scale_amplitude.max(0.0))).ceil() as usize;
        if largest + 2 > self.width.min(self.height) {
            return bad("objects do not fit the canvas");
        }
        if self.frames == 0 || self.sequences == 0 {
            return bad("frames and sequences must be positive");
        }
        if !(0.0..1.0).contains(&self.scale_amplitude) || self.scale_period <= 0.0 {
            return bad("scale_amplitude must be in [0, 1) and scale_period positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.speed.is_finite()) {
            return bad("noise and speed must be finite, noise non-negative");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = SyntheticSpec::default();
        let velocity = match kv.get_str("velocity") {
            None => None,
            Some(v) => Some(parse_pair(v).map_err(Error::Config)?),
        };
        let spec = SyntheticSpec {
            width: kv.get("width", d.width)?,
            height: kv.get("height", d.height)?,
            min_size: kv.get("min_size", d.min_size)?,
            max_size: kv.get("max_size", d.max_size)?,
            motion: kv.get("motion", d.motion)?,
            velocity,
            speed: kv.get("speed", d.speed)?,
            scale_amplitude: kv.get("scale_amplitude", d.scale_amplitude)?,
            scale_period: kv.get("scale_period", d.scale_period)?,
            distractors: kv.get("distractors", d.distractors)?,
            noise: kv.get("noise", d.noise)?,
            frames: kv.get("frames", d.frames)?,
            sequences: kv.get("sequences", d.sequences)?,
            seed: kv.get("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let mut pairs = vec![
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("min_size", self.min_size.to_string()),
            ("max_size", self.max_size.to_string()),
            ("motion", self.motion.name().to_string()),
            ("speed", self.speed.to_string()),
            ("scale_amplitude", self.scale_amplitude.to_string()),
            ("scale_period", self.scale_period.to_string()),
            ("distractors", self.distractors.to_string()),
            ("noise", self.noise.to_string()),
            ("frames", self.frames.to_string()),
            ("sequences", self.sequences.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if let Some((vx, vy)) = self.velocity {
            pairs.push(("velocity", format!("{vx},{vy}")));
        }
        write_key_values(pairs)
    }
}

/// A sequence rendered in memory.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Tensor>,
    pub groundtruth: Vec<BBox>,
}

struct Mover {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    /// Advances one frame, reflecting off the canvas so a `w × h` box stays
    /// fully inside.
    fn step(&mut self, w: f64, h: f64, cw: f64, ch: f64) {
        self.x += self.vx;
        self.y += self.vy;
        if self.x < 0.0 {
            self.x = -self.x;
            self.vx = -self.vx;
        }
        if self.x + w > cw {
            self.x = 2.0 * (cw - w) - self.x;
            self.vx = -self.vx;
        }
        if self.y < 0.0 {
            self.y = -self.y;
            self.vy = -self.vy;
        }
        if self.y + h > ch {
            self.y = 2.0 * (ch - h) - self.y;
            self.vy = -self.vy;
        }
        self.x = self.x.clamp(0.0, cw - w);
        self.y = self.y.clamp(0.0, ch - h);
    }
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    // saturated: one channel high, one low
    let mut c = [rng.gen_range(0.0..1.0), rng.gen_range(0.75..1.0), rng.gen_range(0.0..0.25)];
    let k = rng.gen_range(0..3);
    c.rotate_left(k);
    c
}

struct Patch {
    outer: [f64; 3],
    inner: [f64; 3],
}

fn paint(img: &mut [f64], cw: usize, ch: usize, b: (usize, usize, usize, usize), p: &Patch) {
    let (x, y, w, h) = b;
    let plane = cw * ch;
    let (ix0, iy0) = (x + w / 4, y + h / 4);
    let (ix1, iy1) = (x + w - w / 4, y + h - h / 4);
    for yy in y..(y + h).min(ch) {
        for xx in x..(x + w).min(cw) {
            let inner = xx >= ix0 && xx < ix1 && yy >= iy0 && yy < iy1;
            let col = if inner { p.inner } else { p.outer };
            for c in 0..3 {
                img[c * plane + yy * cw + xx] = col[c];
            }
        }
    }
}

/// Renders sequence `index` of the corpus described by `spec`.
pub fn render_sequence(spec: &SyntheticSpec, index: usize) -> Result<SyntheticSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (cw, ch) = (spec.width as f64, spec.height as f64);

    let base_w = rng.gen_range(spec.min_size..=spec.max_size);
    let base_h = rng.gen_range(spec.min_size..=spec.max_size);
    let max_w = (base_w as f64 * (1.0 + spec.scale_amplitude)).ceil();
    let max_h = (base_h as f64 * (1.0 + spec.scale_amplitude)).ceil();
    let (vx, vy) = match (spec.motion, spec.velocity) {
        (Motion::Static, _) => (0.0, 0.0),
        (_, Some(v)) => v,
        (_, None) => {
            let a = rng.gen_range(0.0..2.0 * PI);
            (spec.speed * a.cos(), spec.speed * a.sin())
        }
    };
    let start_x = rng.gen_range(0..=(cw - max_w) as usize) as f64;
    let start_y = rng.gen_range(0..=(ch - max_h) as usize) as f64;
    let mut target = Mover { x: start_x, y: start_y, vx, vy };
    let target_patch = Patch {
        outer: random_color(&mut rng),
        inner: random_color(&mut rng),
    };

    let mut distractors: Vec<(Mover, usize, usize, Patch)> = (0..spec.distractors)
        .map(|_| {
            let w = rng.gen_range(spec.min_size..=spec.max_size);
            let h = rng.gen_range(spec.min_size..=spec.max_size);
            let a = rng.gen_range(0.0..2.0 * PI);
            let s = rng.gen_range(0.0..=spec.speed.abs());
            let m = Mover {
                x: rng.gen_range(0..=spec.width - w) as f64,
                y: rng.gen_range(0..=spec.height - h) as f64,
                vx: s * a.cos(),
                vy: s * a.sin(),
            };
            let p = Patch {
                outer: random_color(&mut rng),
                inner: random_color(&mut rng),
            };
            (m, w, h, p)
        })
        .collect();

    let bg_color = [0.3, 0.3, 0.3].map(|v: f64| v + rng.gen_range(-0.15..0.15));
    let (fx, fy, phase) = (
        rng.gen_range(0.01..0.05),
        rng.gen_range(0.01..0.05),
        rng.gen_range(0.0..2.0 * PI),
    );
    let plane = spec.width * spec.height;
    let mut background = vec![0.0; 3 * plane];
    for y in 0..spec.height {
        for x in 0..spec.width {
            let wave = 0.1 * (2.0 * PI * (fx * x as f64 + fy * y as f64) + phase).sin();
            for c in 0..3 {
                background[c * plane + y * spec.width + x] =
                    (bg_color[c] + wave * (c as f64 - 1.0).abs().max(0.5)).clamp(0.0, 1.0);
            }
        }
    }
    let noise = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).expect("finite noise"))
    } else {
        None
    };

    let mut frames = Vec::with_capacity(spec.frames);
    let mut groundtruth = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let (w, h) = match spec.motion {
            Motion::Sinusoidal => {
                let f = 1.0 + spec.scale_amplitude * (2.0 * PI * t as f64 / spec.scale_period).sin();
                (
                    (base_w as f64 * f).round().max(2.0),
                    (base_h as f64 * f).round().max(2.0),
                )
            }
            _ => (base_w as f64, base_h as f64),
        };
        if t > 0 {
            target.step(max_w, max_h, cw, ch);
            for (m, dw, dh, _) in distractors.iter_mut() {
                m.step(*dw as f64, *dh as f64, cw, ch);
            }
        }
        // the size oscillates about the center of the largest box
        let x = (target.x + (max_w - w) / 2.0).round();
        let y = (target.y + (max_h - h) / 2.0).round();
        let gt = BBox::from_xywh(x, y, w, h);

        let mut img = background.clone();
        for (m, dw, dh, p) in &distractors {
            let b = (m.x.round() as usize, m.y.round() as usize, *dw, *dh);
            paint(&mut img, spec.width, spec.height, b, p);
        }
        paint(
            &mut img,
            spec.width,
            spec.height,
            (x as usize, y as usize, w as usize, h as usize),
            &target_patch,
        );
        if let Some(n) = &noise {
            for v in img.iter_mut() {
                *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        frames.push(Tensor::new(vec![3, spec.height, spec.width], img)?);
        groundtruth.push(gt);
    }
    Ok(SyntheticSequence { frames, groundtruth })
}

pub fn sequence_id(index: usize) -> String {
    format!("seq_{:04}", index + 1)
}

/// Writes sequence `index` to `dir` as PPM frames plus `groundtruth.txt`.
pub fn generate_sequence(spec: &SyntheticSpec, index: usize, dir: &Path) -> Result<Vec<BBox>> {
    let seq = render_sequence(spec, index)?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (t, frame) in seq.frames.iter().enumerate() {
        write_ppm(&dir.join(frame_name(t)), frame)?;
    }
    write_boxes(&dir.join(GROUNDTRUTH_FILE), &seq.groundtruth)?;
    Ok(seq.groundtruth)
}

/// Writes all `spec.sequences` sequences under `out`, returning their dirs.
pub fn generate_corpus(spec: &SyntheticSpec, out: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    (0..spec.sequences)
        .map(|i| {
            let dir = out.join(sequence_id(i));
            generate_sequence(spec, i, &dir)?;
            Ok(dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn static_sequence_repeats_box() {
        let spec = SyntheticSpec { motion: Motion::Static, frames: 10, ..SyntheticSpec::default() };
        let s = render_sequence(&spec, 0).unwrap();
        assert_eq!(s.groundtruth.len(), 10);
        assert!(s.groundtruth.iter().all(|b| *b == s.groundtruth[0]));
    }

    #[test]
    fn linear_sequence_steps_by_velocity() {
        let spec = SyntheticSpec {
            width: 400,
            velocity: Some((2.0, 0.0)),
            frames: 20,
            ..SyntheticSpec::default()
        };
        // pick a start that cannot reach the right edge in 20 frames
        let s = (0..50)
            .map(|i| render_sequence(&spec, i).unwrap())
            .find(|s| s.groundtruth[0].x1 + 40.0 < 400.0)
            .unwrap();
        for w in s.groundtruth.windows(2) {
            assert_eq!(w[1].x0 - w[0].x0, 2.0);
            assert_eq!(w[1].y0, w[0].y0);
        }
    }

    #[test]
    fn generation_is_byte_identical() {
        let spec = SyntheticSpec { frames: 3, sequences: 2, distractors: 2, ..SyntheticSpec::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_corpus(&spec, a.path()).unwrap();
        generate_corpus(&spec, b.path()).unwrap();
        for seq in ["seq_0001", "seq_0002"] {
            for f in ["00000001.ppm", "00000003.ppm", "groundtruth.txt"] {
                let x = fs::read(a.path().join(seq).join(f)).unwrap();
                let y = fs::read(b.path().join(seq).join(f)).unwrap();
                assert_eq!(x, y, "{seq}/{f}");
            }
        }
        let gt = crate::dataset::read_boxes(&a.path().join("seq_0001/groundtruth.txt")).unwrap();
        assert_eq!(gt.len(), 3);
    }

    #[test]
    fn spec_roundtrip() {
        let spec = SyntheticSpec { motion: Motion::Sinusoidal, velocity: Some((1.5, -2.0)), ..SyntheticSpec::default() };
        let kv = KeyValues::parse(&spec.to_kv(), "mem").unwrap();
        assert_eq!(SyntheticSpec::from_kv(&kv).unwrap(), spec);
        let kv = KeyValues::parse("motion=wobbly\n", "mem").unwrap();
        assert!(SyntheticSpec::from_kv(&kv).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn object_stays_inside(seed in 0u64..1000, idx in 0usize..4, motion in 0usize..3) {
            let motion = [Motion::Static, Motion::Linear, Motion::Sinusoidal][motion];
            let spec = SyntheticSpec {
                width: 80, height: 72, min_size: 8, max_size: 20, speed: 6.0,
                motion, frames: 40, noise: 0.0, seed, ..SyntheticSpec::default()
            };
            let s = render_sequence(&spec, idx).unwrap();
            for b in &s.groundtruth {
                prop_assert!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 80.0 && b.y1 <= 72.0);
                prop_assert!(b.x0.fract() == 0.0 && b.width().fract() == 0.0);
            }
        }
    }
}
