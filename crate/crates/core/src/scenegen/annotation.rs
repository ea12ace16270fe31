use serde::{Deserialize, Serialize};

use super::{LabelMode, SceneSpec, MIN_MASK_PIXELS};
use crate::geometry::BBox;

/// Row-major binary grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask buffer size");
        Self { height, width, data }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight half-open box around the set pixels.
    pub fn tight_box(&self) -> Option<BBox> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    b = Some(match b {
                        None => (c, r, c, r),
                        Some((x0, y0, x1, y1)) => (x0.min(c), y0.min(r), x1.max(c), y1.max(r)),
                    });
                }
            }
        }
        b.map(|(x0, y0, x1, y1)| BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }

    /// Nearest-neighbour resample of the region under `roi` to `size × size`.
    /// Samples falling outside the mask read as unset.
    pub fn crop_resample(&self, roi: &BBox, size: usize) -> Vec<f64> {
        let mut out = vec![0.0; size * size];
        let (sw, sh) = (roi.width() / size as f64, roi.height() / size as f64);
        for u in 0..size {
            let y = roi.y_min + (u as f64 + 0.5) * sh;
            if y < 0.0 || y >= self.height as f64 {
                continue;
            }
            for v in 0..size {
                let x = roi.x_min + (v as f64 + 0.5) * sw;
                if x < 0.0 || x >= self.width as f64 {
                    continue;
                }
                if self.get(y as usize, x as usize) {
                    out[u * size + v] = 1.0;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub angle: f64,
    pub depth: f64,
}

/// Box and class labels, the only supervision available in the target domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeakLabels {
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
}

impl WeakLabels {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attributes {
    pub masks: Vec<BinaryMask>,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub labels: WeakLabels,
    /// Present only for full-mode annotations.
    pub attributes: Option<Attributes>,
}

impl Annotation {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Drops masks and poses.
    pub fn into_weak(self) -> Annotation {
        Annotation {
            labels: self.labels,
            attributes: None,
        }
    }
}

/// Builds the annotation of a rendered scene from its visible masks.
///
/// Objects with fewer than [`MIN_MASK_PIXELS`] visible pixels are dropped.
pub fn derive_annotation(
    scene: &SceneSpec,
    masks: &[Vec<bool>],
    height: usize,
    width: usize,
    label_mode: LabelMode,
) -> Annotation {
    let mut labels = WeakLabels::default();
    let mut attrs = Attributes {
        masks: Vec::new(),
        poses: Vec::new(),
    };
    for (obj, mask) in scene.objects.iter().zip(masks) {
        let mask = BinaryMask::new(height, width, mask.clone());
        if mask.count() < MIN_MASK_PIXELS {
            continue;
        }
        let Some(bbox) = mask.tight_box() else { continue };
        labels.boxes.push(bbox);
        labels.classes.push(obj.class.id());
        attrs.poses.push(Pose {
            angle: obj.angle,
            depth: obj.depth,
        });
        attrs.masks.push(mask);
    }
    Annotation {
        labels,
        attributes: match label_mode {
            LabelMode::Full => Some(attrs),
            LabelMode::Weak => None,
        },
    }
}
