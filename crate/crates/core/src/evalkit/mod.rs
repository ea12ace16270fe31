//! Detection metrics: IoU, greedy matching, all-point AP and the pose
//! detection score, plus whole-dataset evaluation in predicted-box and
//! ground-truth-box modes.

mod evaluate;

pub use evaluate::{evaluate, image_tensor, paste_mask, CascadeModel, EvalMode, EvalOptions};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::scenegen::{BinaryMask, ObjectClass, Pose};
use crate::{Error, Result, NUM_CLASSES};

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskIou {
    pub value: f64,
    /// Both masks empty; `value` is 0 by convention.
    pub degenerate: bool,
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<MaskIou> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(
            format!("{}×{}", a.height, a.width),
            format!("{}×{}", b.height, b.width),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        MaskIou {
            value: 0.0,
            degenerate: true,
        }
    } else {
        MaskIou {
            value: inter as f64 / union as f64,
            degenerate: false,
        }
    })
}

/// One predicted object.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image: usize,
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
    pub pose: Option<Pose>,
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image: usize,
    pub class_id: usize,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(score, class_id, is_true_positive)` per prediction, input order.
    pub labels: Vec<(f64, usize, bool)>,
    /// Matched ground-truth index per prediction.
    pub matched: Vec<Option<usize>>,
    pub gt_per_class: [usize; NUM_CLASSES],
}

/// Greedy matching in the given (score-descending) order. Each prediction
/// takes the unmatched same-image, same-class ground truth of highest IoU
/// at or above `threshold`; ties go to the lower ground-truth index.
pub fn match_predictions(
    predictions: &[Prediction],
    ground_truths: &[GroundTruth],
    iou: impl Fn(&Prediction, &GroundTruth) -> f64,
    threshold: f64,
) -> MatchResult {
    let mut gt_per_class = [0; NUM_CLASSES];
    for g in ground_truths {
        gt_per_class[g.class_id] += 1;
    }
    let mut taken = vec![false; ground_truths.len()];
    let mut labels = Vec::with_capacity(predictions.len());
    let mut matched = Vec::with_capacity(predictions.len());
    for p in predictions {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in ground_truths.iter().enumerate() {
            if taken[j] || g.image != p.image || g.class_id != p.class_id {
                continue;
            }
            let v = iou(p, g);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        labels.push((p.score, p.class_id, best.is_some()));
        matched.push(best.map(|(j, _)| j));
    }
    MatchResult {
        labels,
        matched,
        gt_per_class,
    }
}

/// All-point interpolated AP of `(score, is_tp)` labels against `n_gt`
/// ground truths. Labels are ranked by descending score, stably.
pub fn ap_from_labels(labels: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[b].0.total_cmp(&labels[a].0));
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if labels[i].1 {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // precision envelope, right to left
    for k in (0..points.len().saturating_sub(1)).rev() {
        points[k].1 = points[k].1.max(points[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Per-class AP (`None` for classes without ground truth) and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub mean: f64,
}

pub fn average_precision(result: &MatchResult) -> ApSummary {
    let mut per_class = [None; NUM_CLASSES];
    for (c, slot) in per_class.iter_mut().enumerate() {
        if result.gt_per_class[c] == 0 {
            continue;
        }
        let labels: Vec<(f64, bool)> = result
            .labels
            .iter()
            .filter(|l| l.1 == c)
            .map(|&(s, _, tp)| (s, tp))
            .collect();
        *slot = Some(ap_from_labels(&labels, result.gt_per_class[c]));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    ApSummary { per_class, mean }
}

/// Thresholds of the pose detection score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseCriteria {
    pub iou: f64,
    pub angle_deg: f64,
    pub relative_depth: f64,
}

impl Default for PoseCriteria {
    fn default() -> Self {
        Self {
            iou: 0.5,
            angle_deg: 15.0,
            relative_depth: 0.25,
        }
    }
}

impl PoseCriteria {
    pub fn pose_ok(&self, class_id: usize, pred: &Pose, gt: &Pose) -> bool {
        let class = ObjectClass::from_id(class_id).expect("valid class");
        class.folded_angle_error(pred.angle, gt.angle) <= self.angle_deg.to_radians()
            && (pred.depth - gt.depth).abs() / gt.depth <= self.relative_depth
    }
}

/// Boxes are matched greedily at `criteria.iou`; a match counts as a true
/// positive only if its pose also meets the angle and depth tolerances.
/// Returns the mean AP over these labels.
pub fn pose_detection_score(
    predictions: &[Prediction],
    ground_truths: &[GroundTruth],
    criteria: &PoseCriteria,
) -> ApSummary {
    let mut m = match_predictions(
        predictions,
        ground_truths,
        |p, g| box_iou(&p.bbox, &g.bbox),
        criteria.iou,
    );
    for (k, p) in predictions.iter().enumerate() {
        if let Some(j) = m.matched[k] {
            let ok = match (&p.pose, &ground_truths[j].pose) {
                (Some(a), Some(b)) => criteria.pose_ok(p.class_id, a, b),
                _ => false,
            };
            m.labels[k].2 = ok;
        }
    }
    average_precision(&m)
}

/// Metrics of one evaluation pass. Values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub gt_boxes_mode: bool,
    pub n_images: usize,
    pub gt_per_class: [usize; NUM_CLASSES],
    pub n_predictions: usize,
    pub box_ap: [Option<f64>; NUM_CLASSES],
    pub box_map: f64,
    pub mask_ap: [Option<f64>; NUM_CLASSES],
    pub mask_map: f64,
    pub pose_ap: [Option<f64>; NUM_CLASSES],
    pub pose_ds: f64,
    /// Prediction/ground-truth mask pairs that were both empty.
    pub degenerate_mask_pairs: usize,
}

impl MetricReport {
    /// Scores predictions against ground truth. Predictions must already be
    /// in descending score order.
    pub fn compute(
        predictions: &[Prediction],
        ground_truths: &[GroundTruth],
        n_images: usize,
        gt_boxes_mode: bool,
        criteria: &PoseCriteria,
    ) -> Self {
        let boxes = match_predictions(
            predictions,
            ground_truths,
            |p, g| box_iou(&p.bbox, &g.bbox),
            criteria.iou,
        );
        let box_ap = average_precision(&boxes);
        let degenerate = std::cell::Cell::new(0usize);
        let masks = match_predictions(
            predictions,
            ground_truths,
            |p, g| match (&p.mask, &g.mask) {
                (Some(a), Some(b)) => {
                    let m = mask_iou(a, b).expect("mask shapes");
                    if m.degenerate {
                        degenerate.set(degenerate.get() + 1);
                    }
                    m.value
                }
                _ => 0.0,
            },
            criteria.iou,
        );
        let mask_ap = average_precision(&masks);
        let pose = pose_detection_score(predictions, ground_truths, criteria);
        Self {
            gt_boxes_mode,
            n_images,
            gt_per_class: boxes.gt_per_class,
            n_predictions: predictions.len(),
            box_ap: box_ap.per_class,
            box_map: box_ap.mean,
            mask_ap: mask_ap.per_class,
            mask_map: mask_ap.mean,
            pose_ap: pose.per_class,
            pose_ds: pose.mean,
            degenerate_mask_pairs: degenerate.get(),
        }
    }
}
