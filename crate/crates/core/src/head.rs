//! Classification, regression and center-ness branches over the response map.

use rand::Rng;

use crate::autograd::{Eager, Exec};
use crate::error::{Error, Result};
use crate::fusion::ConvLayer;
use crate::tensor::Tensor;

/// Group count for a head of `channels` channels: the largest divisor not
/// above 32 that leaves at least two channels per group.
pub fn norm_groups(channels: usize) -> usize {
    (1..=32.min(channels / 2).max(1))
        .rev()
        .find(|&g| channels.is_multiple_of(g))
        .unwrap_or(1)
}

/// Per-channel scale and shift after group normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Norm {
    fn identity(c: usize) -> Self {
        Norm {
            weight: Tensor::full([c], 1.0),
            bias: Tensor::zeros([c]),
        }
    }

    fn forward<E: Exec>(&self, e: &mut E, name: &str, x: &E::Value) -> Result<E::Value> {
        let groups = norm_groups(self.weight.len());
        let g = e.param(&format!("{name}.weight"), &self.weight);
        let b = e.param(&format!("{name}.bias"), &self.bias);
        e.group_norm(x, groups, &g, &b)
    }
}

/// Two 3×3 conv + group norm + ReLU blocks and a 1×1 projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub conv1: ConvLayer,
    pub norm1: Norm,
    pub conv2: ConvLayer,
    pub norm2: Norm,
    pub proj: ConvLayer,
}

impl Branch {
    fn init<R: Rng>(rng: &mut R, in_c: usize, mid: usize, out_c: usize) -> Self {
        Branch {
            conv1: ConvLayer::init(rng, mid, in_c, 3),
            norm1: Norm::identity(mid),
            conv2: ConvLayer::init(rng, mid, mid, 3),
            norm2: Norm::identity(mid),
            proj: ConvLayer::init_small(rng, out_c, mid, 1),
        }
    }

    fn zeros(in_c: usize, mid: usize, out_c: usize) -> Self {
        Branch {
            conv1: ConvLayer::zeros(mid, in_c, 3),
            norm1: Norm::identity(mid),
            conv2: ConvLayer::zeros(mid, mid, 3),
            norm2: Norm::identity(mid),
            proj: ConvLayer::zeros(out_c, mid, 1),
        }
    }

    fn forward<E: Exec>(&self, e: &mut E, name: &str, x: &E::Value) -> Result<E::Value> {
        let y = self.conv1.forward(e, &format!("{name}.conv1"), x, 1, 1)?;
        let y = self.norm1.forward(e, &format!("{name}.norm1"), &y)?;
        let y = e.relu(&y);
        let y = self.conv2.forward(e, &format!("{name}.conv2"), &y, 1, 1)?;
        let y = self.norm2.forward(e, &format!("{name}.norm2"), &y)?;
        let y = e.relu(&y);
        self.proj.forward(e, &format!("{name}.proj"), &y, 1, 0)
    }

    fn visit<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.conv1.visit(&format!("{name}.conv1"), out);
        out.push((format!("{name}.norm1.weight"), &self.norm1.weight));
        out.push((format!("{name}.norm1.bias"), &self.norm1.bias));
        self.conv2.visit(&format!("{name}.conv2"), out);
        out.push((format!("{name}.norm2.weight"), &self.norm2.weight));
        out.push((format!("{name}.norm2.bias"), &self.norm2.bias));
        self.proj.visit(&format!("{name}.proj"), out);
    }

    fn visit_mut<'a>(&'a mut self, name: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.conv1.visit_mut(&format!("{name}.conv1"), out);
        out.push((format!("{name}.norm1.weight"), &mut self.norm1.weight));
        out.push((format!("{name}.norm1.bias"), &mut self.norm1.bias));
        self.conv2.visit_mut(&format!("{name}.conv2"), out);
        out.push((format!("{name}.norm2.weight"), &mut self.norm2.weight));
        out.push((format!("{name}.norm2.bias"), &mut self.norm2.bias));
        self.proj.visit_mut(&format!("{name}.proj"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub cls: Branch,
    pub reg: Branch,
    pub cen: Branch,
}

impl HeadWeights {
    pub fn init<R: Rng>(rng: &mut R, in_channels: usize, mid_channels: usize) -> Self {
        HeadWeights {
            cls: Branch::init(rng, in_channels, mid_channels, 2),
            reg: Branch::init(rng, in_channels, mid_channels, 4),
            cen: Branch::init(rng, in_channels, mid_channels, 1),
        }
    }

    pub fn zeros(in_channels: usize, mid_channels: usize) -> Self {
        HeadWeights {
            cls: Branch::zeros(in_channels, mid_channels, 2),
            reg: Branch::zeros(in_channels, mid_channels, 4),
            cen: Branch::zeros(in_channels, mid_channels, 1),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.cls.conv1.weight.shape()[1]
    }

    pub fn forward<E: Exec>(&self, e: &mut E, response: &E::Value) -> Result<HeadOutput<E::Value>> {
        let (c, _, _) = e.value(response).dims3()?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "head expects {} response channels, got {c}",
                self.in_channels()
            )));
        }
        let cls = self.cls.forward(e, "head.cls", response)?;
        let raw = self.reg.forward(e, "head.reg", response)?;
        let reg = e.exp(&raw);
        let cen = self.cen.forward(e, "head.cen", response)?;
        Ok(HeadOutput { cls, reg, cen })
    }

    pub(crate) fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.cls.visit("head.cls", out);
        self.reg.visit("head.reg", out);
        self.cen.visit("head.cen", out);
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.cls.visit_mut("head.cls", out);
        self.reg.visit_mut("head.reg", out);
        self.cen.visit_mut("head.cen", out);
    }
}

/// Per-location head maps.
///
/// - `cls`: `2×h×w` logits, channel 0 background, channel 1 foreground.
/// - `reg`: `4×h×w` distances `(l, t, r, b)` in search-region pixels, already
///   passed through `exp` so they are strictly positive.
/// - `cen`: `1×h×w` center-ness logit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<V = Tensor> {
    pub cls: V,
    pub reg: V,
    pub cen: V,
}

impl HeadOutput<Tensor> {
    pub fn map_size(&self) -> (usize, usize) {
        let s = self.cls.shape();
        (s[1], s[2])
    }
}

pub fn head_forward(response: &Tensor, weights: &HeadWeights) -> Result<HeadOutput> {
    weights.forward(&mut Eager, response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = HeadWeights::init(&mut rng, 16, 8);
        let r = Tensor::from_fn([16, 9, 9], |i| (i as f64 * 0.01).sin());
        let out = head_forward(&r, &w).unwrap();
        assert_eq!(out.cls.shape(), &[2, 9, 9]);
        assert_eq!(out.reg.shape(), &[4, 9, 9]);
        assert_eq!(out.cen.shape(), &[1, 9, 9]);
        assert!(out.reg.data().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn zero_weights() {
        let w = HeadWeights::zeros(16, 8);
        let r = Tensor::from_fn([16, 9, 9], |i| i as f64);
        let out = head_forward(&r, &w).unwrap();
        assert!(out.cls.data().iter().all(|&v| v == 0.0));
        assert!(softmax2(&out.cls).unwrap().data().iter().all(|&v| v == 0.5));
        // raw regression output 0 decodes to unit distances
        assert!(out.reg.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn group_counts() {
        assert_eq!(norm_groups(256), 32);
        assert_eq!(norm_groups(16), 8);
        assert_eq!(norm_groups(6), 3);
        assert_eq!(norm_groups(1), 1);
    }

    #[test]
    fn channel_mismatch() {
        let w = HeadWeights::zeros(16, 8);
        assert!(head_forward(&Tensor::zeros([8, 9, 9]), &w).is_err());
    }
}
