//! Losses and their composition into the training objective.
//!
//! [`compose_losses`] runs forward and backward one image at a time and
//! accumulates gradients. Every normaliser (images per domain, supervised
//! objects, domain-classifier samples) is known from the labels before the
//! pass starts, so per-image accumulation yields exactly the batch-mean
//! gradient.
//!
//! Adversarial alignment is the usual gradient-reversal construction: the
//! domain classifier is trained to tell source (label 0) from target
//! (label 1) with a focal loss, and the reversal layer between the feature
//! and the classifier hands the backbone the negated, scaled gradient.

mod losses;

pub use losses::{
    assign_cells, detection_loss, focal_domain_batch, focal_domain_loss, focal_domain_loss_logit, log_sigmoid,
    mask_loss, mask_loss_logits, pose_loss, smooth_l1, softplus, DetectionLoss, PoseLoss, PROB_EPS, SMOOTH_L1_BETA,
};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::netcore::{
    global_avg_pool, global_avg_pool_backward, grl_backward, roi_backward, roi_extract, AlignmentMode, FeatureMap,
    ModelParams, Parameters,
};
use crate::scenegen::{Attributes, DomainTag, ObjectClass, WeakLabels};
use crate::{Error, Result, MASK_SIZE, ROI_SIZE};

/// Adversarial alignment settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub lambda_adv: f64,
    /// Peak gradient-reversal scale, reached at the end of the ramp.
    pub lambda_grl: f64,
    /// Fraction of training over which the reversal scale ramps up from 0.
    pub grl_ramp: f64,
    pub gamma: f64,
    /// Set from the training preset, never read from config files.
    #[serde(skip)]
    pub alignment_mode: AlignmentMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_grl: 0.1,
            grl_ramp: 0.2,
            gamma: 2.0,
            alignment_mode: AlignmentMode::None,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_grl", self.lambda_grl),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.grl_ramp) {
            return Err(Error::Config(format!(
                "grl_ramp must lie in [0, 1], got {}",
                self.grl_ramp
            )));
        }
        Ok(())
    }
}

/// Loss values of one step. `joint` is the supervised part, `adv` the
/// domain-classification loss as minimised by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det_src: f64,
    pub att_src: f64,
    pub det_tgt: f64,
    /// Target attribute loss; non-zero only with full target supervision.
    pub att_tgt: f64,
    pub adv: f64,
    pub joint: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn source(&self) -> f64 {
        self.det_src + self.att_src
    }

    pub fn target(&self) -> f64 {
        self.det_tgt + self.att_tgt
    }

    pub fn is_finite(&self) -> bool {
        [
            self.det_src,
            self.att_src,
            self.det_tgt,
            self.att_tgt,
            self.adv,
            self.joint,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// One training image with whatever supervision its domain provides.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: FeatureMap,
    /// Absent for unlabeled target images.
    pub labels: Option<WeakLabels>,
    pub attributes: Option<Attributes>,
    /// Boxes the ROI features are extracted from, one per labeled object.
    pub roi_boxes: Vec<BBox>,
}

impl TrainSample {
    fn num_rois(&self) -> usize {
        self.labels.as_ref().map_or(0, |_| self.roi_boxes.len())
    }
}

/// Which terms [`compose_losses`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeOptions {
    pub det_src: bool,
    pub att_src: bool,
    pub det_tgt: bool,
    /// Supervise attribute heads on target objects (oracle only). Target
    /// samples carrying attributes are an error unless this is set.
    pub att_tgt: bool,
    pub adv: bool,
    /// Current reversal scale.
    pub lambda_grl: f64,
    /// Replaces the reversal multiplier `−lambda_grl` when set;
    /// `Some(1.0)` removes the reversal from the graph.
    pub grl_multiplier: Option<f64>,
}

impl ComposeOptions {
    /// Every term the config enables, with the reversal at `lambda_grl`.
    pub fn new(config: &AdaptConfig, lambda_grl: f64) -> Self {
        Self {
            det_src: true,
            att_src: true,
            det_tgt: true,
            att_tgt: false,
            adv: config.alignment_mode != AlignmentMode::None,
            lambda_grl,
            grl_multiplier: None,
        }
    }
}

/// Loss breakdown and the gradient of `total` w.r.t. every parameter.
#[derive(Debug, Clone)]
pub struct Composed {
    pub losses: LossBreakdown,
    pub grads: ModelParams,
}

struct Weights {
    det: f64,
    att: f64,
    adv: f64,
}

fn recip(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

/// Evaluates `L_joint + λ_adv · L_adv` and its gradient.
///
/// Detection loss is the mean over labeled images of each domain. Attribute
/// loss is the mean over supervised objects. The domain loss is the mean
/// over source samples plus the mean over target samples, a sample being an
/// ROI for instance-level alignment and an image for image-level alignment.
pub fn compose_losses(
    params: &ModelParams,
    source: &[TrainSample],
    target: &[TrainSample],
    config: &AdaptConfig,
    options: &ComposeOptions,
) -> Result<Composed> {
    let mode = config.alignment_mode;
    let adv = options.adv && mode != AlignmentMode::None;
    if adv && params.alignment_mode() != mode {
        return Err(Error::InvalidInput(format!(
            "model carries a {} domain classifier, config asks for {}",
            params.alignment_mode().name(),
            mode.name()
        )));
    }
    if !options.att_tgt {
        if let Some(i) = target.iter().position(|s| s.attributes.is_some()) {
            return Err(Error::Supervision(format!(
                "target sample {i} carries attribute labels"
            )));
        }
    }
    for (domain, batch) in [("source", source), ("target", target)] {
        for (i, s) in batch.iter().enumerate() {
            if let Some(l) = &s.labels {
                if l.boxes.len() != l.classes.len() || s.roi_boxes.len() != l.boxes.len() {
                    return Err(Error::InvalidInput(format!(
                        "{domain} sample {i}: label/ROI counts disagree"
                    )));
                }
            }
            if let Some(a) = &s.attributes {
                let n = s.labels.as_ref().map_or(0, |l| l.len());
                if a.masks.len() != n || a.poses.len() != n {
                    return Err(Error::InvalidInput(format!(
                        "{domain} sample {i}: attribute count mismatch"
                    )));
                }
            }
        }
    }

    let adv_count = |batch: &[TrainSample]| match mode {
        AlignmentMode::ImageLevel => batch.len(),
        _ => batch.iter().map(TrainSample::num_rois).sum(),
    };
    let labeled = |batch: &[TrainSample]| batch.iter().filter(|s| s.labels.is_some()).count();
    let supervised_objects = |batch: &[TrainSample]| {
        batch
            .iter()
            .filter(|s| s.attributes.is_some())
            .map(TrainSample::num_rois)
            .sum::<usize>()
    };

    let w_src = Weights {
        det: if options.det_src { recip(labeled(source)) } else { 0.0 },
        att: if options.att_src {
            recip(supervised_objects(source))
        } else {
            0.0
        },
        adv: if adv {
            config.lambda_adv * recip(adv_count(source))
        } else {
            0.0
        },
    };
    let w_tgt = Weights {
        det: if options.det_tgt { recip(labeled(target)) } else { 0.0 },
        att: if options.att_tgt {
            recip(supervised_objects(target))
        } else {
            0.0
        },
        adv: if adv {
            config.lambda_adv * recip(adv_count(target))
        } else {
            0.0
        },
    };

    let mut grads = params.zeros_like();
    let mut losses = LossBreakdown::default();
    let mut adv_src = 0.0;
    let mut adv_tgt = 0.0;
    let ctx = Ctx {
        params,
        config,
        options,
        adv,
    };
    for s in source {
        let r = ctx.image(
            s,
            DomainTag::Source,
            &w_src,
            options.det_src,
            options.att_src,
            &mut grads,
        )?;
        losses.det_src += r.det * w_src.det;
        losses.att_src += r.att * w_src.att;
        adv_src += r.adv;
    }
    for s in target {
        let r = ctx.image(
            s,
            DomainTag::Target,
            &w_tgt,
            options.det_tgt,
            options.att_tgt,
            &mut grads,
        )?;
        losses.det_tgt += r.det * w_tgt.det;
        losses.att_tgt += r.att * w_tgt.att;
        adv_tgt += r.adv;
    }
    if adv {
        losses.adv = adv_src * recip(adv_count(source)) + adv_tgt * recip(adv_count(target));
    }
    losses.joint = losses.source() + losses.target();
    losses.total = losses.joint + if adv { config.lambda_adv * losses.adv } else { 0.0 };
    Ok(Composed { losses, grads })
}

struct Ctx<'a> {
    params: &'a ModelParams,
    config: &'a AdaptConfig,
    options: &'a ComposeOptions,
    adv: bool,
}

#[derive(Default)]
struct ImageTerms {
    det: f64,
    att: f64,
    adv: f64,
}

impl Ctx<'_> {
    fn image(
        &self,
        sample: &TrainSample,
        domain: DomainTag,
        w: &Weights,
        det_on: bool,
        att_on: bool,
        grads: &mut ModelParams,
    ) -> Result<ImageTerms> {
        let p = self.params;
        let mut terms = ImageTerms::default();
        let labels = sample.labels.as_ref();
        let att = sample.attributes.as_ref().filter(|_| att_on && labels.is_some());
        let det = det_on && labels.is_some();
        let instance_adv = self.adv && self.config.alignment_mode.is_instance_level() && labels.is_some();
        let image_adv = self.adv && self.config.alignment_mode == AlignmentMode::ImageLevel;
        if !det && att.is_none() && !instance_adv && !image_adv {
            return Ok(terms);
        }

        let (features, bb_cache) = p.theta.backbone.forward(&sample.image)?;
        let mut d_features = FeatureMap::zeros(features.channels, features.height, features.width);

        if let (true, Some(l)) = (det, labels) {
            let (out, head_cache) = p.theta.head.forward(&features)?;
            let mut loss = detection_loss(&out, &l.boxes, &l.classes);
            terms.det = loss.total();
            loss.grad.data.iter_mut().for_each(|g| *g *= w.det);
            let d = p.theta.head.backward(&head_cache, &loss.grad, &mut grads.theta.head);
            d_features.add_assign(&d);
        }

        if att.is_some() || instance_adv {
            let l = labels.expect("checked above");
            for (j, roi_box) in sample.roi_boxes.iter().enumerate() {
                let roi = roi_extract(&features, roi_box, ROI_SIZE)?;
                let mut d_roi = FeatureMap::zeros(roi.channels, roi.height, roi.width);
                if let Some(a) = att {
                    let class = ObjectClass::from_id(l.classes[j])?;
                    let (logits, mcache) = p.omega.mask.forward(&roi)?;
                    let crop = a.masks[j].crop_resample(roi_box, MASK_SIZE);
                    let (m_loss, mut m_grad) = mask_loss_logits(&logits, &crop);
                    m_grad.iter_mut().for_each(|g| *g *= w.att);
                    d_roi.add_assign(&p.omega.mask.backward(&mcache, &m_grad, &mut grads.omega.mask));

                    let (raw, pcache) = p.omega.pose.forward(&roi, class.id(), roi_box)?;
                    let pl = pose_loss(&raw, &a.poses[j], class);
                    let pg = pl.grad.map(|g| g * w.att);
                    d_roi.add_assign(&p.omega.pose.backward(&pcache, &pg, &mut grads.omega.pose));
                    terms.att += m_loss + pl.total();
                }
                if instance_adv {
                    let d_dom = self.domain_term(&roi.data, l.classes[j], domain, w.adv, grads, &mut terms)?;
                    for (a, b) in d_roi.data.iter_mut().zip(&d_dom) {
                        *a += b;
                    }
                }
                roi_backward(&mut d_features, roi_box, &d_roi)?;
            }
        }

        if image_adv {
            let pooled = global_avg_pool(&features);
            let d_pooled = self.domain_term(&pooled, 0, domain, w.adv, grads, &mut terms)?;
            d_features.add_assign(&global_avg_pool_backward(&d_pooled, features.height, features.width));
        }

        p.theta
            .backbone
            .backward(&bb_cache, &d_features, &mut grads.theta.backbone);
        Ok(terms)
    }

    /// Runs the domain classifier on `input` (through the reversal) and
    /// returns the gradient arriving at `input`.
    fn domain_term(
        &self,
        input: &[f64],
        class_id: usize,
        domain: DomainTag,
        weight: f64,
        grads: &mut ModelParams,
        terms: &mut ImageTerms,
    ) -> Result<Vec<f64>> {
        let clf = self
            .params
            .delta
            .classifier
            .as_ref()
            .expect("alignment requires a classifier");
        let gclf = grads
            .delta
            .classifier
            .as_mut()
            .expect("alignment requires a classifier");
        let k = clf.select(class_id)?;
        let (logits, cache) = clf.forward(input, 1)?;
        let (loss, dz) = focal_domain_loss_logit(logits[k], domain, self.config.gamma);
        terms.adv += loss;
        let mut d_logits = vec![0.0; logits.len()];
        d_logits[k] = dz * weight;
        let d_in = clf.backward(&cache, &d_logits, gclf);
        Ok(match self.options.grl_multiplier {
            None => grl_backward(&d_in, self.options.lambda_grl),
            Some(m) => d_in.iter().map(|g| m * g).collect(),
        })
    }
}
