use super::backbone::Backbone;
use super::detect::DetectionHead;
use super::domain::{AlignmentMode, DomainClassifier};
use super::heads::{MaskHead, PoseHead};
use super::tensor::Tensor;
use super::Parameters;
use crate::rng;

/// Backbone and detection head.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectorParams {
    pub backbone: Backbone,
    pub head: DetectionHead,
}

/// Mask and pose heads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeParams {
    pub mask: MaskHead,
    pub pose: PoseHead,
}

/// The domain classifier of the active alignment mode, if any.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DomainParams {
    pub classifier: Option<DomainClassifier>,
}

impl DomainParams {
    pub fn mode(&self) -> AlignmentMode {
        self.classifier.as_ref().map_or(AlignmentMode::None, |c| c.mode)
    }
}

/// All trainable parameters, split into the detector (`theta`), the
/// attribute heads (`omega`) and the domain classifier (`delta`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub theta: DetectorParams,
    pub omega: AttributeParams,
    pub delta: DomainParams,
}

impl ModelParams {
    /// Zero-valued parameters with the structure for `mode`.
    pub fn zeros(mode: AlignmentMode) -> Self {
        Self {
            theta: DetectorParams::default(),
            omega: AttributeParams::default(),
            delta: DomainParams {
                classifier: DomainClassifier::new(mode),
            },
        }
    }

    /// Seeded initialisation. Each part draws from its own stream, so
    /// `theta` and `omega` do not depend on the alignment mode.
    pub fn init(seed: u64, mode: AlignmentMode) -> Self {
        let mut p = Self::zeros(mode);
        p.theta.backbone.init(&mut rng::stream("init/backbone", seed, 0));
        p.theta.head.init(&mut rng::stream("init/detect", seed, 0));
        p.omega.mask.init(&mut rng::stream("init/mask", seed, 0));
        p.omega.pose.init(&mut rng::stream("init/pose", seed, 0));
        if let Some(c) = p.delta.classifier.as_mut() {
            c.init(&mut rng::stream("init/domain", seed, 0));
        }
        p
    }

    pub fn alignment_mode(&self) -> AlignmentMode {
        self.delta.mode()
    }
}

impl Parameters for DetectorParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.backbone.visit(&format!("{prefix}/backbone"), f);
        self.head.visit(&format!("{prefix}/detect"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.backbone.visit_mut(&format!("{prefix}/backbone"), f);
        self.head.visit_mut(&format!("{prefix}/detect"), f);
    }
}

impl Parameters for AttributeParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.mask.visit(&format!("{prefix}/mask"), f);
        self.pose.visit(&format!("{prefix}/pose"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.mask.visit_mut(&format!("{prefix}/mask"), f);
        self.pose.visit_mut(&format!("{prefix}/pose"), f);
    }
}

impl Parameters for DomainParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        if let Some(c) = &self.classifier {
            c.visit(&format!("{prefix}/{}", c.mode.name()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(c) = self.classifier.as_mut() {
            let p = format!("{prefix}/{}", c.mode.name());
            c.visit_mut(&p, f);
        }
    }
}

impl Parameters for ModelParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.theta.visit(&format!("{prefix}theta"), f);
        self.omega.visit(&format!("{prefix}omega"), f);
        self.delta.visit(&format!("{prefix}delta"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.theta.visit_mut(&format!("{prefix}theta"), f);
        self.omega.visit_mut(&format!("{prefix}omega"), f);
        self.delta.visit_mut(&format!("{prefix}delta"), f);
    }
}
