use std::cmp::Ordering;

use rand::Rng;

use super::layers::{sigmoid, Conv2d, ConvCache};
use super::tensor::{FeatureMap, Tensor};
use super::Parameters;
use crate::geometry::BBox;
use crate::{Result, FEATURE_CHANNELS, IMAGE_SIZE, NUM_CLASSES, STRIDE};

/// Objectness, class logits, then `(dx, dy, log w, log h)`.
pub const DETECTION_CHANNELS: usize = 1 + NUM_CLASSES + 4;
/// Box sizes are regressed in log space relative to this many pixels.
pub const REFERENCE_SIZE: f64 = 16.0;
const MAX_LOG_SIZE: f64 = 3.0;

/// Per-cell 1×1 convolution over the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionHead {
    pub conv: Conv2d,
}

pub type DetectionHeadCache = ConvCache;

/// Raw per-cell head output, `DETECTION_CHANNELS × S × S`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub grid: FeatureMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
    /// Row-major index of the cell that produced the detection.
    pub cell: usize,
}

impl Default for DetectionHead {
    fn default() -> Self {
        Self::new()
    }
}

impl DetectionHead {
    pub fn new() -> Self {
        Self {
            conv: Conv2d::new(FEATURE_CHANNELS, DETECTION_CHANNELS, 1, 1, 0, 1),
        }
    }

    /// Small weights, objectness bias at a 1% prior.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.conv.weight.fill_normal(rng, 0.01);
        self.conv.bias.fill(0.0);
        self.conv.bias.data[0] = -(99.0f64).ln();
    }

    pub fn forward(&self, features: &FeatureMap) -> Result<(DetectionOutput, DetectionHeadCache)> {
        let (grid, cache) = self.conv.forward(features)?;
        Ok((DetectionOutput { grid }, cache))
    }

    pub fn backward(&self, cache: &DetectionHeadCache, d_out: &FeatureMap, grad: &mut DetectionHead) -> FeatureMap {
        self.conv
            .backward(cache, d_out, &mut grad.conv, true)
            .expect("input gradient requested")
    }
}

impl Parameters for DetectionHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv.visit(&format!("{prefix}/conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.visit_mut(&format!("{prefix}/conv"), f);
    }
}

impl DetectionOutput {
    pub fn rows(&self) -> usize {
        self.grid.height
    }

    pub fn cols(&self) -> usize {
        self.grid.width
    }

    pub fn objectness(&self, row: usize, col: usize) -> f64 {
        self.grid.at(0, row, col)
    }

    pub fn class_logits(&self, row: usize, col: usize) -> [f64; NUM_CLASSES] {
        std::array::from_fn(|k| self.grid.at(1 + k, row, col))
    }

    pub fn deltas(&self, row: usize, col: usize) -> [f64; 4] {
        std::array::from_fn(|k| self.grid.at(1 + NUM_CLASSES + k, row, col))
    }
}

/// Regression target of `bbox` relative to cell `(row, col)`: center
/// offset from the cell center in cell units, log size over
/// [`REFERENCE_SIZE`].
pub fn encode_box(bbox: &BBox, row: usize, col: usize) -> [f64; 4] {
    let (cx, cy) = bbox.center();
    let s = STRIDE as f64;
    [
        cx / s - (col as f64 + 0.5),
        cy / s - (row as f64 + 0.5),
        (bbox.width() / REFERENCE_SIZE).ln(),
        (bbox.height() / REFERENCE_SIZE).ln(),
    ]
}

pub fn decode_box(deltas: &[f64; 4], row: usize, col: usize) -> BBox {
    let s = STRIDE as f64;
    let cx = (col as f64 + 0.5 + deltas[0]) * s;
    let cy = (row as f64 + 0.5 + deltas[1]) * s;
    let w = REFERENCE_SIZE * deltas[2].min(MAX_LOG_SIZE).exp();
    let h = REFERENCE_SIZE * deltas[3].min(MAX_LOG_SIZE).exp();
    BBox::from_center(cx, cy, w, h)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn by_score_desc(a: &Detection, b: &Detection) -> Ordering {
    b.score.total_cmp(&a.score).then(a.cell.cmp(&b.cell))
}

/// Greedy per-class non-maximum suppression; output sorted by score.
pub fn nms(mut detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    detections.sort_by(by_score_desc);
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Scores every cell as objectness × best class probability, keeps those
/// at or above `score_threshold`, clips boxes to the image and applies NMS.
pub fn decode_detections(output: &DetectionOutput, score_threshold: f64, nms_iou: f64) -> Vec<Detection> {
    let size = IMAGE_SIZE as f64;
    let mut dets = Vec::new();
    for row in 0..output.rows() {
        for col in 0..output.cols() {
            let obj = sigmoid(output.objectness(row, col));
            let probs = softmax(&output.class_logits(row, col));
            let (class_id, p) =
                probs.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |best, (k, &p)| if p > best.1 { (k, p) } else { best },
                );
            let score = obj * p;
            if score < score_threshold {
                continue;
            }
            let bbox = decode_box(&output.deltas(row, col), row, col).clip(size, size);
            if !bbox.is_valid() {
                continue;
            }
            dets.push(Detection {
                bbox,
                class_id,
                score,
                cell: row * output.cols() + col,
            });
        }
    }
    nms(dets, nms_iou)
}
