use serde::{Deserialize, Serialize};

use super::{GroundTruth, MetricReport, PoseCriteria, Prediction};
use crate::geometry::BBox;
use crate::netcore::{decode_detections, decode_pose, roi_extract, sigmoid, Detection, FeatureMap, ModelParams};
use crate::scenegen::{BinaryMask, Dataset, LabelMode, ObjectClass, Pose, RgbImage};
use crate::{Error, Result, IMAGE_SIZE, MASK_SIZE, ROI_SIZE};

/// Where attribute heads take their boxes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Predicted,
    GtBoxes,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Predicted => "predicted",
            EvalMode::GtBoxes => "gt_boxes",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [EvalMode::Predicted, EvalMode::GtBoxes]
            .into_iter()
            .find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub mask_threshold: f64,
    pub criteria: PoseCriteria,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 20,
            mask_threshold: 0.5,
            criteria: PoseCriteria::default(),
        }
    }
}

/// What evaluation needs from a model.
pub trait CascadeModel {
    fn features(&self, image: &FeatureMap) -> Result<FeatureMap>;

    /// Decoded detections, best first.
    fn detect(&self, features: &FeatureMap, options: &EvalOptions) -> Result<Vec<Detection>>;

    /// Mask probabilities (`MASK_SIZE²`, over `bbox`) and decoded pose.
    fn attributes(
        &self,
        image_index: usize,
        features: &FeatureMap,
        bbox: &BBox,
        class_id: usize,
    ) -> Result<(Vec<f64>, Pose)>;
}

impl CascadeModel for ModelParams {
    fn features(&self, image: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.theta.backbone.forward(image)?.0)
    }

    fn detect(&self, features: &FeatureMap, options: &EvalOptions) -> Result<Vec<Detection>> {
        let (out, _) = self.theta.head.forward(features)?;
        let mut dets = decode_detections(&out, options.score_threshold, options.nms_iou);
        dets.truncate(options.max_detections);
        Ok(dets)
    }

    fn attributes(&self, _: usize, features: &FeatureMap, bbox: &BBox, class_id: usize) -> Result<(Vec<f64>, Pose)> {
        let roi = roi_extract(features, bbox, ROI_SIZE)?;
        let (logits, _) = self.omega.mask.forward(&roi)?;
        let (raw, _) = self.omega.pose.forward(&roi, class_id, bbox)?;
        let probs = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok((probs, decode_pose(&raw, ObjectClass::from_id(class_id)?)))
    }
}

/// `3 × H × W` network input of an image.
pub fn image_tensor(image: &RgbImage) -> FeatureMap {
    FeatureMap::from_vec(3, image.height, image.width, image.to_chw())
}

/// Resamples `M × M` box-relative probabilities onto the image grid
/// bilinearly and thresholds them. Pixels whose centers fall outside the
/// box stay unset.
pub fn paste_mask(probs: &[f64], bbox: &BBox, height: usize, width: usize, threshold: f64) -> BinaryMask {
    let m = (probs.len() as f64).sqrt() as usize;
    let mut mask = BinaryMask::empty(height, width);
    let last = (m - 1) as f64;
    for y in 0..height {
        let py = y as f64 + 0.5;
        if py < bbox.y_min || py >= bbox.y_max {
            continue;
        }
        let v = ((py - bbox.y_min) / bbox.height() * m as f64 - 0.5).clamp(0.0, last);
        let (v0, fv) = (v.floor() as usize, v - v.floor());
        let v1 = (v0 + 1).min(m - 1);
        for x in 0..width {
            let px = x as f64 + 0.5;
            if px < bbox.x_min || px >= bbox.x_max {
                continue;
            }
            let u = ((px - bbox.x_min) / bbox.width() * m as f64 - 0.5).clamp(0.0, last);
            let (u0, fu) = (u.floor() as usize, u - u.floor());
            let u1 = (u0 + 1).min(m - 1);
            let p = (1.0 - fv) * ((1.0 - fu) * probs[v0 * m + u0] + fu * probs[v0 * m + u1])
                + fv * ((1.0 - fu) * probs[v1 * m + u0] + fu * probs[v1 * m + u1]);
            if p >= threshold {
                mask.data[y * width + x] = true;
            }
        }
    }
    mask
}

/// Evaluates `model` on a full-label dataset.
///
/// In predicted mode the attribute heads run on decoded detections; in
/// ground-truth-box mode they run on every annotated box with its class,
/// each at score 1.
pub fn evaluate(
    model: &impl CascadeModel,
    dataset: &Dataset,
    mode: EvalMode,
    options: &EvalOptions,
) -> Result<MetricReport> {
    if dataset.label_mode() != LabelMode::Full {
        return Err(Error::Supervision(format!(
            "evaluation needs attribute labels; {} is a weak-label dataset",
            dataset.dir().display()
        )));
    }
    let mut predictions = Vec::new();
    let mut ground_truths = Vec::new();
    for i in 0..dataset.len() {
        let image = image_tensor(dataset.image(i)?);
        let labels = dataset.labels(i)?.clone();
        let attrs = dataset.attributes(i)?;
        for (k, (bbox, &class_id)) in labels.boxes.iter().zip(&labels.classes).enumerate() {
            ground_truths.push(GroundTruth {
                image: i,
                class_id,
                bbox: *bbox,
                mask: Some(attrs.masks[k].clone()),
                pose: Some(attrs.poses[k]),
            });
        }
        let features = model.features(&image)?;
        let boxes: Vec<(BBox, usize, f64)> = match mode {
            EvalMode::Predicted => model
                .detect(&features, options)?
                .iter()
                .map(|d| (d.bbox, d.class_id, d.score))
                .collect(),
            EvalMode::GtBoxes => labels
                .boxes
                .iter()
                .zip(&labels.classes)
                .map(|(b, &c)| (*b, c, 1.0))
                .collect(),
        };
        for (bbox, class_id, score) in boxes {
            let (probs, pose) = model.attributes(i, &features, &bbox, class_id)?;
            debug_assert_eq!(probs.len(), MASK_SIZE * MASK_SIZE);
            predictions.push(Prediction {
                image: i,
                class_id,
                score,
                bbox,
                mask: Some(paste_mask(
                    &probs,
                    &bbox,
                    IMAGE_SIZE,
                    IMAGE_SIZE,
                    options.mask_threshold,
                )),
                pose: Some(pose),
            });
        }
    }
    // stable: ties keep (image, object) order
    predictions.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(MetricReport::compute(
        &predictions,
        &ground_truths,
        dataset.len(),
        mode == EvalMode::GtBoxes,
        &options.criteria,
    ))
}
