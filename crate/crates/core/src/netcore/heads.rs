use rand::Rng;

use super::layers::{sigmoid, silu_backward, silu_forward, upsample2x, upsample2x_backward, Conv2d, ConvCache, Linear};
use super::tensor::{FeatureMap, Tensor};
use super::Parameters;
use crate::geometry::BBox;
use crate::scenegen::{ObjectClass, Pose};
use crate::{Error, Result, FEATURE_CHANNELS, NUM_CLASSES, ROI_SIZE};

/// conv3×3 (16) → 2× upsample → conv3×3 (16) → conv1×1 (1) → sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHead {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct MaskHeadCache {
    c1: ConvCache,
    pre1: Vec<f64>,
    c2: ConvCache,
    pre2: Vec<f64>,
    c3: ConvCache,
}

impl Default for MaskHead {
    fn default() -> Self {
        Self::new()
    }
}

impl MaskHead {
    pub fn new() -> Self {
        Self {
            conv1: Conv2d::new(FEATURE_CHANNELS, 16, 3, 1, 1, 1),
            conv2: Conv2d::new(16, 16, 3, 1, 1, 1),
            out: Conv2d::new(16, 1, 1, 1, 0, 1),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.conv1.init(rng);
        self.conv2.init(rng);
        self.out.weight.fill_normal(rng, 0.01);
        self.out.bias.fill(0.0);
    }

    /// Returns mask logits (`M × M`, row-major) and the cache.
    pub fn forward(&self, roi: &FeatureMap) -> Result<(Vec<f64>, MaskHeadCache)> {
        let (z1, c1) = self.conv1.forward(roi)?;
        let a1 = FeatureMap::from_vec(z1.channels, z1.height, z1.width, silu_forward(&z1.data));
        let up = upsample2x(&a1);
        let (z2, c2) = self.conv2.forward(&up)?;
        let a2 = FeatureMap::from_vec(z2.channels, z2.height, z2.width, silu_forward(&z2.data));
        let (logits, c3) = self.out.forward(&a2)?;
        Ok((
            logits.data,
            MaskHeadCache {
                c1,
                pre1: z1.data,
                c2,
                pre2: z2.data,
                c3,
            },
        ))
    }

    pub fn probabilities(logits: &[f64]) -> Vec<f64> {
        logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// `d_logits` is `M × M`; returns the ROI feature gradient.
    pub fn backward(&self, cache: &MaskHeadCache, d_logits: &[f64], grad: &mut MaskHead) -> FeatureMap {
        let side = 2 * ROI_SIZE;
        let d3 = FeatureMap::from_vec(1, side, side, d_logits.to_vec());
        let mut d2 = self
            .out
            .backward(&cache.c3, &d3, &mut grad.out, true)
            .expect("input grad");
        silu_backward(&cache.pre2, &mut d2.data);
        let d_up = self
            .conv2
            .backward(&cache.c2, &d2, &mut grad.conv2, true)
            .expect("input grad");
        let mut d1 = upsample2x_backward(&d_up);
        silu_backward(&cache.pre1, &mut d1.data);
        self.conv1
            .backward(&cache.c1, &d1, &mut grad.conv1, true)
            .expect("input grad")
    }
}

impl Parameters for MaskHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv1.visit(&format!("{prefix}/conv1"), f);
        self.conv2.visit(&format!("{prefix}/conv2"), f);
        self.out.visit(&format!("{prefix}/out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_mut(&format!("{prefix}/conv1"), f);
        self.conv2.visit_mut(&format!("{prefix}/conv2"), f);
        self.out.visit_mut(&format!("{prefix}/out"), f);
    }
}

/// `(sin, cos, log depth)`.
pub const POSE_OUTPUTS: usize = 3;
const HIDDEN: usize = 64;
const BOX_FEATURES: usize = 2;
const ROI_FLAT: usize = FEATURE_CHANNELS * ROI_SIZE * ROI_SIZE;

/// Two fully connected layers over the flattened ROI feature, the class
/// one-hot and the log box size.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct PoseHeadCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Default for PoseHead {
    fn default() -> Self {
        Self::new()
    }
}

impl PoseHead {
    pub fn new() -> Self {
        Self {
            fc1: Linear::new(ROI_FLAT + NUM_CLASSES + BOX_FEATURES, HIDDEN),
            fc2: Linear::new(HIDDEN, POSE_OUTPUTS),
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.fc1.init(rng, 2f64.sqrt());
        self.fc2.init(rng, 0.1);
    }

    pub fn input_vector(roi: &FeatureMap, class_id: usize, bbox: &BBox) -> Result<Vec<f64>> {
        if class_id >= NUM_CLASSES {
            return Err(Error::InvalidInput(format!("class id {class_id} out of range")));
        }
        if roi.data.len() != ROI_FLAT {
            return Err(Error::shape(format!("{ROI_FLAT} ROI values"), roi.shape_string()));
        }
        let mut x = Vec::with_capacity(ROI_FLAT + NUM_CLASSES + BOX_FEATURES);
        x.extend_from_slice(&roi.data);
        x.extend((0..NUM_CLASSES).map(|k| if k == class_id { 1.0 } else { 0.0 }));
        x.push((bbox.width() / super::REFERENCE_SIZE).ln());
        x.push((bbox.height() / super::REFERENCE_SIZE).ln());
        Ok(x)
    }

    pub fn forward(
        &self,
        roi: &FeatureMap,
        class_id: usize,
        bbox: &BBox,
    ) -> Result<([f64; POSE_OUTPUTS], PoseHeadCache)> {
        let input = Self::input_vector(roi, class_id, bbox)?;
        let pre = self.fc1.forward(&input, 1)?;
        let hidden = silu_forward(&pre);
        let out = self.fc2.forward(&hidden, 1)?;
        Ok(([out[0], out[1], out[2]], PoseHeadCache { input, pre, hidden }))
    }

    /// Returns the ROI feature gradient (`C × P × P`).
    pub fn backward(&self, cache: &PoseHeadCache, d_out: &[f64; POSE_OUTPUTS], grad: &mut PoseHead) -> FeatureMap {
        let mut dh = self
            .fc2
            .backward(&cache.hidden, d_out, 1, &mut grad.fc2, true)
            .expect("input grad");
        silu_backward(&cache.pre, &mut dh);
        let dx = self
            .fc1
            .backward(&cache.input, &dh, 1, &mut grad.fc1, true)
            .expect("input grad");
        FeatureMap::from_vec(FEATURE_CHANNELS, ROI_SIZE, ROI_SIZE, dx[..ROI_FLAT].to_vec())
    }
}

impl Parameters for PoseHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.fc1.visit(&format!("{prefix}/fc1"), f);
        self.fc2.visit(&format!("{prefix}/fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc1.visit_mut(&format!("{prefix}/fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}/fc2"), f);
    }
}

/// Decodes raw pose outputs. The `(sin, cos)` pair encodes the angle
/// multiplied by the class's symmetry order; its norm is irrelevant.
pub fn decode_pose(raw: &[f64; POSE_OUTPUTS], class: ObjectClass) -> Pose {
    let folded = raw[0].atan2(raw[1]);
    Pose {
        angle: class.canonical_angle(folded / class.symmetry_order()),
        depth: raw[2].exp(),
    }
}
