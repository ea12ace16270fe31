use crate::geometry::BBox;
use crate::netcore::{encode_box, sigmoid, DetectionOutput, FeatureMap, POSE_OUTPUTS};
use crate::scenegen::{DomainTag, ObjectClass, Pose};
use crate::{NUM_CLASSES, STRIDE};

/// Probability clamp for the probability-space losses.
pub const PROB_EPS: f64 = 1e-6;
/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < SMOOTH_L1_BETA {
        0.5 * d * d / SMOOTH_L1_BETA
    } else {
        d.abs() - 0.5 * SMOOTH_L1_BETA
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < SMOOTH_L1_BETA {
        d / SMOOTH_L1_BETA
    } else {
        d.signum()
    }
}

/// Grid cell owning each ground-truth box: the cell containing its center.
/// When two boxes share a cell the larger one keeps it (lower index on equal
/// area) and the other is left unassigned. Returns the owning GT per cell.
pub fn assign_cells(gt_boxes: &[BBox], rows: usize, cols: usize) -> Vec<Option<usize>> {
    let mut owner: Vec<Option<usize>> = vec![None; rows * cols];
    for (i, b) in gt_boxes.iter().enumerate() {
        let (cx, cy) = b.center();
        let col = ((cx / STRIDE as f64).floor().max(0.0) as usize).min(cols - 1);
        let row = ((cy / STRIDE as f64).floor().max(0.0) as usize).min(rows - 1);
        let cell = &mut owner[row * cols + col];
        match *cell {
            Some(j) if gt_boxes[j].area() >= b.area() => {}
            _ => *cell = Some(i),
        }
    }
    owner
}

/// Detection loss split into its three terms, with the gradient w.r.t. the
/// raw head output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLoss {
    pub objectness: f64,
    pub class: f64,
    pub bbox: f64,
    pub grad: FeatureMap,
}

impl DetectionLoss {
    pub fn total(&self) -> f64 {
        self.objectness + self.class + self.bbox
    }
}

/// Objectness BCE averaged over all cells, class cross-entropy and
/// smooth-L1 box regression averaged over positive cells.
pub fn detection_loss(output: &DetectionOutput, gt_boxes: &[BBox], gt_classes: &[usize]) -> DetectionLoss {
    let (rows, cols) = (output.rows(), output.cols());
    let owner = assign_cells(gt_boxes, rows, cols);
    let n_cells = (rows * cols) as f64;
    let n_pos = owner.iter().filter(|o| o.is_some()).count();
    let mut grad = FeatureMap::zeros(output.grid.channels, rows, cols);
    let (mut obj, mut cls, mut reg) = (0.0, 0.0, 0.0);
    for row in 0..rows {
        for col in 0..cols {
            let z = output.objectness(row, col);
            let owner = owner[row * cols + col];
            let y = if owner.is_some() { 1.0 } else { 0.0 };
            obj += softplus(z) - y * z;
            *grad.at_mut(0, row, col) = (sigmoid(z) - y) / n_cells;
            let Some(g) = owner else { continue };

            let logits = output.class_logits(row, col);
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            cls += lse - logits[gt_classes[g]];
            for (k, &logit) in logits.iter().enumerate() {
                let p = (logit - lse).exp();
                let t = if k == gt_classes[g] { 1.0 } else { 0.0 };
                *grad.at_mut(1 + k, row, col) = (p - t) / n_pos as f64;
            }

            let target = encode_box(&gt_boxes[g], row, col);
            let deltas = output.deltas(row, col);
            for k in 0..4 {
                let d = deltas[k] - target[k];
                reg += smooth_l1(d);
                *grad.at_mut(1 + NUM_CLASSES + k, row, col) = smooth_l1_grad(d) / n_pos as f64;
            }
        }
    }
    let pos = n_pos.max(1) as f64;
    DetectionLoss {
        objectness: obj / n_cells,
        class: cls / pos,
        bbox: reg / pos,
        grad,
    }
}

/// Mean binary cross-entropy of probabilities against a 0/1 target, with
/// probabilities clamped to `[ε, 1 − ε]`.
pub fn mask_loss(probs: &[f64], target: &[f64]) -> f64 {
    assert_eq!(probs.len(), target.len(), "mask sizes");
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// [`mask_loss`] on logits, unclamped, with the logit gradient.
pub fn mask_loss_logits(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), target.len(), "mask sizes");
    let n = logits.len() as f64;
    let loss = logits
        .iter()
        .zip(target)
        .map(|(&z, &t)| softplus(z) - t * z)
        .sum::<f64>()
        / n;
    let grad = logits.iter().zip(target).map(|(&z, &t)| (sigmoid(z) - t) / n).collect();
    (loss, grad)
}

/// Pose loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLoss {
    pub angle: f64,
    pub depth: f64,
    pub grad: [f64; POSE_OUTPUTS],
}

impl PoseLoss {
    pub fn total(&self) -> f64 {
        self.angle + self.depth
    }
}

/// `1 − cos` between the normalised predicted `(sin, cos)` and the
/// embedding of the ground-truth angle times the class's symmetry order,
/// plus the absolute log-depth error.
pub fn pose_loss(pred: &[f64; POSE_OUTPUTS], gt: &Pose, class: ObjectClass) -> PoseLoss {
    let k = class.symmetry_order();
    let (ts, tc) = (k * gt.angle).sin_cos();
    let (s, c) = (pred[0], pred[1]);
    let r = (s * s + c * c).sqrt().max(1e-12);
    let dot = (s * ts + c * tc) / r;
    let angle = 1.0 - dot;
    // d(−dot)/ds and d(−dot)/dc
    let gs = -ts / r + dot * s / (r * r);
    let gc = -tc / r + dot * c / (r * r);
    let d = pred[2] - gt.depth.ln();
    let gd = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    PoseLoss {
        angle,
        depth: d.abs(),
        grad: [gs, gc, gd],
    }
}

/// Focal domain-classification loss of one sample given the probability
/// that it belongs to the target domain.
pub fn focal_domain_loss(p: f64, domain: DomainTag, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    match domain {
        DomainTag::Target => -(1.0 - p).powf(gamma) * p.ln(),
        DomainTag::Source => -p.powf(gamma) * (1.0 - p).ln(),
    }
}

/// [`focal_domain_loss`] of `σ(z)` computed from the logit, with
/// `d loss / d z`.
pub fn focal_domain_loss_logit(z: f64, domain: DomainTag, gamma: f64) -> (f64, f64) {
    // The source case is the target case at −z.
    let (z, sign) = match domain {
        DomainTag::Target => (z, 1.0),
        DomainTag::Source => (-z, -1.0),
    };
    let p = sigmoid(z);
    let q = sigmoid(-z);
    let log_p = log_sigmoid(z);
    let loss = -q.powf(gamma) * log_p;
    let grad = gamma * p * q.powf(gamma) * log_p - q.powf(gamma + 1.0);
    (loss, sign * grad)
}

/// Mean over source samples plus mean over target samples; an empty side
/// contributes zero.
pub fn focal_domain_batch(source_probs: &[f64], target_probs: &[f64], gamma: f64) -> f64 {
    let mean = |ps: &[f64], d| {
        if ps.is_empty() {
            0.0
        } else {
            ps.iter().map(|&p| focal_domain_loss(p, d, gamma)).sum::<f64>() / ps.len() as f64
        }
    };
    mean(source_probs, DomainTag::Source) + mean(target_probs, DomainTag::Target)
}
