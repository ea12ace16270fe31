//! The cascaded model: backbone, grid detection head, ROI feature
//! extraction, mask and pose heads, domain classifiers and the gradient
//! reversal operator.
//!
//! There is no autodiff engine. Each layer exposes `forward` returning a
//! cache and a `backward` that consumes it; the objectives module chains
//! them by hand.

mod backbone;
mod checkpoint;
mod detect;
mod domain;
mod heads;
mod layers;
pub mod linalg;
mod params;
mod roi;
mod tensor;

pub use backbone::{Backbone, BackboneCache};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use detect::{
    decode_box, decode_detections, encode_box, nms, Detection, DetectionHead, DetectionHeadCache, DetectionOutput,
    DETECTION_CHANNELS, REFERENCE_SIZE,
};
pub use domain::{
    global_avg_pool, global_avg_pool_backward, grl_backward, grl_forward, AlignmentMode, DomainClassifier,
    DomainClassifierCache,
};
pub use heads::{decode_pose, MaskHead, MaskHeadCache, PoseHead, PoseHeadCache, POSE_OUTPUTS};
pub use layers::{sigmoid, silu_backward, silu_forward, upsample2x, upsample2x_backward, Conv2d, ConvCache, Linear};
pub use params::{AttributeParams, DetectorParams, DomainParams, ModelParams};
pub use roi::{roi_backward, roi_extract, roi_sample_points};
pub use tensor::{FeatureMap, Tensor};

/// Named traversal over the tensors of a parameter container.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name, t)));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Same structure with every value set to zero.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(0.0));
        z
    }

    fn sum_sq(&self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, t| s += t.sum_sq());
        s
    }

    /// Flattened copy of every value in traversal order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.extend_from_slice(&t.data));
        out
    }
}
