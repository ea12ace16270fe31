use rand::Rng;

use super::layers::{silu_backward, silu_forward, Conv2d, ConvCache};
use super::tensor::{FeatureMap, Tensor};
use super::Parameters;
use crate::{Error, Result, FEATURE_CHANNELS, STRIDE};

/// Four 3×3 conv blocks (16-32-32-32 channels), stride 2 in blocks two and
/// three, dilation 2 in the last block, SiLU after each.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub convs: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    convs: Vec<ConvCache>,
    pre: Vec<FeatureMap>,
}

impl Default for Backbone {
    fn default() -> Self {
        Self::new()
    }
}

impl Backbone {
    pub fn new() -> Self {
        Self {
            convs: vec![
                Conv2d::new(3, 16, 3, 1, 1, 1),
                Conv2d::new(16, 32, 3, 2, 1, 1),
                Conv2d::new(32, 32, 3, 2, 1, 1),
                Conv2d::new(32, FEATURE_CHANNELS, 3, 1, 2, 2),
            ],
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for c in &mut self.convs {
            c.init(rng);
        }
    }

    /// `image` is `3 × H × W` with values in `[0, 1]`; H and W must be
    /// multiples of the stride.
    pub fn forward(&self, image: &FeatureMap) -> Result<(FeatureMap, BackboneCache)> {
        if image.channels != 3
            || !image.height.is_multiple_of(STRIDE)
            || !image.width.is_multiple_of(STRIDE)
            || image.height == 0
        {
            return Err(Error::shape("3×H×W with H, W multiples of 4", image.shape_string()));
        }
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut x = image.clone();
        for conv in &self.convs {
            let (z, cache) = conv.forward(&x)?;
            x = FeatureMap::from_vec(z.channels, z.height, z.width, silu_forward(&z.data));
            caches.push(cache);
            pre.push(z);
        }
        Ok((x, BackboneCache { convs: caches, pre }))
    }

    pub fn backward(&self, cache: &BackboneCache, d_features: &FeatureMap, grad: &mut Backbone) {
        let mut d = d_features.clone();
        for (k, conv) in self.convs.iter().enumerate().rev() {
            silu_backward(&cache.pre[k].data, &mut d.data);
            match conv.backward(&cache.convs[k], &d, &mut grad.convs[k], k > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

impl Parameters for Backbone {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&format!("{prefix}/conv{}", i + 1), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}/conv{}", i + 1), f);
        }
    }
}
