//! Siamese feature extraction and depth-wise correlation fusion.
//!
//! The backbone is a stem followed by three tap stages. The stem and the first
//! tap stage bring the input down to `1/total_stride` resolution; the last two
//! tap stages keep that resolution, so the three tap outputs can be stacked
//! along channels. Template and search images share one set of weights.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Eager, Exec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    /// Channels of the three tap points.
    pub stage_channels: [usize; 3],
    /// Kernel extents of the three tap stages. The first stage downsamples by
    /// two; the other two must be odd so padding preserves resolution.
    pub stage_kernels: [usize; 3],
    /// Input pixels per feature cell. Even; the stem covers half of it.
    pub total_stride: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_channels: 3,
            stem_channels: 8,
            stem_kernel: 4,
            stage_channels: [8, 8, 8],
            stage_kernels: [2, 3, 3],
            total_stride: 8,
        }
    }
}

impl BackboneConfig {
    /// Channel layout of the three-layer feature stack used in full scale
    /// models (256 channels per tap).
    pub fn wide() -> Self {
        BackboneConfig {
            stem_channels: 64,
            stage_channels: [256, 256, 256],
            ..BackboneConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("backbone: {m}")));
        if self.in_channels == 0 || self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return bad("channel counts must be positive");
        }
        if self.total_stride < 2 || !self.total_stride.is_multiple_of(2) {
            return bad("total_stride must be an even number >= 2");
        }
        if self.stem_kernel < self.stem_stride() {
            return bad("stem kernel must be at least the stem stride");
        }
        if self.stage_kernels[0] < 2 {
            return bad("first stage kernel must be >= 2");
        }
        if self.stage_kernels[1].is_multiple_of(2) || self.stage_kernels[2].is_multiple_of(2) {
            return bad("resolution-preserving stage kernels must be odd");
        }
        Ok(())
    }

    pub fn stem_stride(&self) -> usize {
        self.total_stride / 2
    }

    pub fn stem_padding(&self) -> usize {
        (self.stem_kernel - self.stem_stride()) / 2
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_channels.iter().sum()
    }

    /// Spatial extent of the feature map for an `input`-pixel square image.
    pub fn feature_extent(&self, input: usize) -> Result<usize> {
        let stem = conv_extent(input, self.stem_kernel, self.stem_stride(), self.stem_padding())?;
        let k = self.stage_kernels[0];
        conv_extent(stem, k, 2, (k - 1) / 2)
    }
}

fn conv_extent(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k > len + 2 * pad {
        return Err(Error::Config(format!(
            "input extent {len} too small for kernel {k}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn zeros(out_c: usize, in_c: usize, k: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros([out_c, in_c, k, k]),
            bias: Tensor::zeros([out_c]),
        }
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(rng: &mut R, out_c: usize, in_c: usize, k: usize) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = Tensor::from_fn([out_c, in_c, k, k], |_| normal.sample(rng));
        ConvLayer {
            weight,
            bias: Tensor::zeros([out_c]),
        }
    }

    /// Normal(0, 0.01) weights, zero bias, so outputs start near zero.
    pub fn init_small<R: Rng>(rng: &mut R, out_c: usize, in_c: usize, k: usize) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        ConvLayer {
            weight: Tensor::from_fn([out_c, in_c, k, k], |_| normal.sample(rng)),
            bias: Tensor::zeros([out_c]),
        }
    }

    pub(crate) fn forward<E: Exec>(
        &self,
        e: &mut E,
        name: &str,
        x: &E::Value,
        stride: usize,
        padding: usize,
    ) -> Result<E::Value> {
        let w = e.param(&format!("{name}.weight"), &self.weight);
        let b = e.param(&format!("{name}.bias"), &self.bias);
        e.conv2d(x, &w, Some(&b), stride, padding)
    }

    pub(crate) fn visit<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{name}.weight"), &self.weight));
        out.push((format!("{name}.bias"), &self.bias));
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, name: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{name}.weight"), &mut self.weight));
        out.push((format!("{name}.bias"), &mut self.bias));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem: ConvLayer,
    pub stages: [ConvLayer; 3],
}

impl Backbone {
    pub fn init<R: Rng>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = ConvLayer::init(rng, config.stem_channels, config.in_channels, config.stem_kernel);
        let s = config.stage_channels;
        let k = config.stage_kernels;
        let stages = [
            ConvLayer::init(rng, s[0], config.stem_channels, k[0]),
            ConvLayer::init(rng, s[1], s[0], k[1]),
            ConvLayer::init(rng, s[2], s[1], k[2]),
        ];
        Ok(Backbone {
            config,
            stem,
            stages,
        })
    }

    pub fn zeros(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let s = config.stage_channels;
        let k = config.stage_kernels;
        Ok(Backbone {
            stem: ConvLayer::zeros(config.stem_channels, config.in_channels, config.stem_kernel),
            stages: [
                ConvLayer::zeros(s[0], config.stem_channels, k[0]),
                ConvLayer::zeros(s[1], s[0], k[1]),
                ConvLayer::zeros(s[2], s[1], k[2]),
            ],
            config,
        })
    }

    /// Runs the backbone and returns the three tap outputs stacked along channels.
    pub fn forward<E: Exec>(&self, e: &mut E, image: &E::Value) -> Result<E::Value> {
        let cfg = &self.config;
        let (c, h, w) = e.value(image).dims3()?;
        if c != cfg.in_channels || h != w {
            return Err(Error::shape(format!(
                "backbone expects a square {}-channel image, got {c}×{h}×{w}",
                cfg.in_channels
            )));
        }
        let x = self
            .stem
            .forward(e, "backbone.stem", image, cfg.stem_stride(), cfg.stem_padding())?;
        let x = e.relu(&x);
        let mut taps = Vec::with_capacity(3);
        let mut x = x;
        for (i, stage) in self.stages.iter().enumerate() {
            let k = cfg.stage_kernels[i];
            let stride = if i == 0 { 2 } else { 1 };
            let y = stage.forward(e, &format!("backbone.stage{}", i + 3), &x, stride, (k - 1) / 2)?;
            x = e.relu(&y);
            taps.push(x.clone());
        }
        e.concat(&taps)
    }

    pub(crate) fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.stem.visit("backbone.stem", out);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&format!("backbone.stage{}", i + 3), out);
        }
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.stem.visit_mut("backbone.stem", out);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&format!("backbone.stage{}", i + 3), out);
        }
    }
}

/// Feature stack of a `3×S×S` image: `(ΣCi)×s×s`.
pub fn extract_features(image: &Tensor, backbone: &Backbone) -> Result<Tensor> {
    backbone.forward(&mut Eager, image)
}

/// Depth-wise correlation of search features against template features,
/// followed by the 1×1 channel reduction.
pub fn fuse(search_feat: &Tensor, template_feat: &Tensor, reduce_weights: &Tensor) -> Result<Tensor> {
    let mut e = Eager;
    fuse_with(&mut e, search_feat, template_feat, reduce_weights)
}

pub(crate) fn fuse_with<E: Exec>(
    e: &mut E,
    search_feat: &E::Value,
    template_feat: &E::Value,
    reduce_weights: &Tensor,
) -> Result<E::Value> {
    let (c, _, _) = e.value(search_feat).dims3()?;
    let (_, rc, kh, kw) = reduce_weights.dims4()?;
    if rc != c || kh != 1 || kw != 1 {
        return Err(Error::shape(format!(
            "reduction weights {:?} do not fit {c} correlation channels",
            reduce_weights.shape()
        )));
    }
    let corr = e.xcorr(search_feat, template_feat)?;
    let w = e.param("neck.reduce.weight", reduce_weights);
    e.conv2d(&corr, &w, None, 1, 0)
}

/// Dimension-reduced response map handed to the head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub response: Tensor,
    pub stride: usize,
    pub search_size: usize,
}

impl FusionOutput {
    pub fn map_extent(&self) -> usize {
        self.response.shape()[1]
    }
}
