//! The full network: shared backbone, correlation + reduction neck, and head.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Eager, Exec};
use crate::config::{parse_triple, write_key_values, KeyValues};
use crate::error::{Error, Result};
use crate::fusion::{fuse_with, Backbone, BackboneConfig, FusionOutput};
use crate::head::{HeadOutput, HeadWeights};
use crate::targets::Grid;
use crate::tensor::{load_tensor, save_tensor, Tensor};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Channels of the reduced response map.
    pub reduced_channels: usize,
    /// Width of the head branches.
    pub head_channels: usize,
    pub template_size: usize,
    pub search_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            reduced_channels: 16,
            head_channels: 16,
            template_size: 64,
            search_size: 128,
        }
    }
}

impl ModelConfig {
    /// 256 channels per tap, 768 stacked, reduced to 256; 127 px template,
    /// 255 px search region.
    pub fn full_scale() -> Self {
        ModelConfig {
            backbone: BackboneConfig::wide(),
            reduced_channels: 256,
            head_channels: 256,
            template_size: 127,
            search_size: 255,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.reduced_channels == 0 || self.head_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let z = self.backbone.feature_extent(self.template_size)?;
        let x = self.backbone.feature_extent(self.search_size)?;
        if z > x {
            return Err(Error::Config(format!(
                "template features ({z}) larger than search features ({x})"
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.backbone.total_stride
    }

    /// Cells per side of the response map.
    pub fn map_size(&self) -> Result<usize> {
        let z = self.backbone.feature_extent(self.template_size)?;
        let x = self.backbone.feature_extent(self.search_size)?;
        Ok(x + 1 - z)
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.map_size()?, self.stride(), self.search_size))
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let triple = |key: &str, default: [usize; 3]| -> Result<[usize; 3]> {
            match kv.get_str(key) {
                None => Ok(default),
                Some(v) => parse_triple(v).map_err(|m| Error::Config(format!("{key}: {m}"))),
            }
        };
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                stem_channels: kv.get("stem_channels", d.backbone.stem_channels)?,
                stem_kernel: kv.get("stem_kernel", d.backbone.stem_kernel)?,
                stage_channels: triple("stage_channels", d.backbone.stage_channels)?,
                stage_kernels: triple("stage_kernels", d.backbone.stage_kernels)?,
                total_stride: kv.get("stride", d.backbone.total_stride)?,
            },
            reduced_channels: kv.get("reduced_channels", d.reduced_channels)?,
            head_channels: kv.get("head_channels", d.head_channels)?,
            template_size: kv.get("template_size", d.template_size)?,
            search_size: kv.get("search_size", d.search_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let t = |a: [usize; 3]| format!("{},{},{}", a[0], a[1], a[2]);
        write_key_values([
            ("stem_channels", self.backbone.stem_channels.to_string()),
            ("stem_kernel", self.backbone.stem_kernel.to_string()),
            ("stage_channels", t(self.backbone.stage_channels)),
            ("stage_kernels", t(self.backbone.stage_kernels)),
            ("stride", self.backbone.total_stride.to_string()),
            ("reduced_channels", self.reduced_channels.to_string()),
            ("head_channels", self.head_channels.to_string()),
            ("template_size", self.template_size.to_string()),
            ("search_size", self.search_size.to_string()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiamCarNet {
    pub config: ModelConfig,
    pub backbone: Backbone,
    /// `Cr×C×1×1` reduction applied to the correlation map.
    pub reduce: Tensor,
    pub head: HeadWeights,
}

impl SiamCarNet {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::init(config.backbone.clone(), &mut rng)?;
        let c = config.backbone.feature_channels();
        let normal = Normal::new(0.0, (1.0 / c as f64).sqrt()).expect("positive std");
        let reduce = Tensor::from_fn([config.reduced_channels, c, 1, 1], |_| normal.sample(&mut rng));
        let head = HeadWeights::init(&mut rng, config.reduced_channels, config.head_channels);
        Ok(SiamCarNet {
            config,
            backbone,
            reduce,
            head,
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        self.config.grid()
    }

    fn check_image(&self, img: &Tensor, size: usize, what: &str) -> Result<()> {
        if img.shape() != [3, size, size] {
            return Err(Error::shape(format!(
                "{what} must be 3×{size}×{size}, got {:?}",
                img.shape()
            )));
        }
        Ok(())
    }

    /// Template branch; computed once per track.
    pub fn template_features(&self, template: &Tensor) -> Result<Tensor> {
        self.check_image(template, self.config.template_size, "template")?;
        self.backbone.forward(&mut Eager, template)
    }

    pub fn respond(&self, template_feat: &Tensor, search: &Tensor) -> Result<FusionOutput> {
        self.check_image(search, self.config.search_size, "search region")?;
        let xf = self.backbone.forward(&mut Eager, search)?;
        let response = fuse_with(&mut Eager, &xf, template_feat, &self.reduce)?;
        Ok(FusionOutput {
            response,
            stride: self.config.stride(),
            search_size: self.config.search_size,
        })
    }

    /// Tape-free inference on a search region against precomputed template features.
    pub fn predict(&self, template_feat: &Tensor, search: &Tensor) -> Result<HeadOutput> {
        let fused = self.respond(template_feat, search)?;
        self.head.forward(&mut Eager, &fused.response)
    }

    /// Full forward pass of a template/search pair in any execution context.
    pub fn forward<E: Exec>(
        &self,
        e: &mut E,
        template: Tensor,
        search: Tensor,
    ) -> Result<HeadOutput<E::Value>> {
        self.check_image(&template, self.config.template_size, "template")?;
        self.check_image(&search, self.config.search_size, "search region")?;
        let z = e.input(template);
        let x = e.input(search);
        let zf = self.backbone.forward(e, &z)?;
        let xf = self.backbone.forward(e, &x)?;
        let r = fuse_with(e, &xf, &zf, &self.reduce)?;
        self.head.forward(e, &r)
    }

    /// Every parameter with its persistent name, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.backbone.visit(&mut out);
        out.push(("neck.reduce.weight".to_string(), &self.reduce));
        self.head.visit(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.backbone.visit_mut(&mut out);
        out.push(("neck.reduce.weight".to_string(), &mut self.reduce));
        self.head.visit_mut(&mut out);
        out
    }

    /// Writes one `.tnsr` file per parameter and a manifest with the config
    /// and the parameter list.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let mut manifest = String::from("# siamcar weights\n");
        manifest.push_str(&self.config.to_kv());
        for (name, t) in self.params() {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(manifest, "param.{name}={}", shape.join("x")).expect("string write");
            save_tensor(&dir.join(format!("{name}.tnsr")), t)?;
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(Error::io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let kv = KeyValues::load(&dir.join(MANIFEST_FILE))?;
        let config = ModelConfig::from_kv(&kv)?;
        let mut net = SiamCarNet::init(config, 0)?;
        let expected: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
        let listed: Vec<&str> = kv
            .keys()
            .filter_map(|k| k.strip_prefix("param."))
            .collect();
        if listed.len() != expected.len() {
            return Err(Error::Format {
                what: "weights manifest",
                path: dir.join(MANIFEST_FILE),
                msg: format!("lists {} parameters, config implies {}", listed.len(), expected.len()),
            });
        }
        for (name, slot) in net.params_mut() {
            let path = dir.join(format!("{name}.tnsr"));
            let t = load_tensor(&path)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format {
                    what: "weights",
                    path,
                    msg: format!("shape {:?}, expected {:?}", t.shape(), slot.shape()),
                });
            }
            *slot = t;
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn default_geometry() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.map_size().unwrap(), 9);
        assert_eq!(cfg.grid().unwrap().location(4, 4), (64.0, 64.0));
    }

    #[test]
    fn full_scale_geometry() {
        let cfg = ModelConfig::full_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.backbone.feature_channels(), 768);
        let z = cfg.backbone.feature_extent(127).unwrap();
        let x = cfg.backbone.feature_extent(255).unwrap();
        assert!(z < x);
        assert_eq!(cfg.map_size().unwrap(), x - z + 1);
    }

    #[test]
    fn forward_shapes() {
        let net = SiamCarNet::init(ModelConfig::default(), 1).unwrap();
        let z = Tensor::full([3, 64, 64], 0.3);
        let x = Tensor::full([3, 128, 128], 0.6);
        let zf = net.template_features(&z).unwrap();
        assert_eq!(zf.shape(), &[24, 8, 8]);
        let out = net.predict(&zf, &x).unwrap();
        assert_eq!(out.cls.shape(), &[2, 9, 9]);
        assert_eq!(out.reg.shape(), &[4, 9, 9]);
        assert_eq!(out.cen.shape(), &[1, 9, 9]);
        let mut tape = Tape::new();
        let taped = net.forward(&mut tape, z, x).unwrap();
        assert_eq!(tape.value(&taped.cls), &out.cls);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = SiamCarNet::init(ModelConfig::default(), 9).unwrap();
        net.save(dir.path()).unwrap();
        let back = SiamCarNet::load(dir.path()).unwrap();
        assert_eq!(back, net);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("param.neck.reduce.weight=16x24x1x1"));
        assert!(manifest.contains("stage_channels=8,8,8"));
    }

    #[test]
    fn load_detects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let net = SiamCarNet::init(ModelConfig::default(), 9).unwrap();
        net.save(dir.path()).unwrap();
        save_tensor(&dir.path().join("neck.reduce.weight.tnsr"), &Tensor::zeros([2, 2])).unwrap();
        assert!(SiamCarNet::load(dir.path()).is_err());
    }
}
