//! ROIAlign-style bilinear sampling with one sample per output cell.
//!
//! Output cell `(a, b)` samples the feature map at the center of the
//! `(a, b)` sub-cell of a `P × P` grid laid over the box. Box coordinates
//! are divided by the stride; feature values sit at cell centers, so a
//! continuous coordinate `u` maps to index position `u − 0.5`, clamped to
//! the map.

use super::tensor::FeatureMap;
use crate::geometry::BBox;
use crate::{Error, Result, STRIDE};

/// One bilinear tap: the four corner indices `(y0, y1, x0, x1)` and the
/// fractional offsets `(ly, lx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
    pub ly: f64,
    pub lx: f64,
}

fn axis_tap(pixel: f64, size: usize) -> (usize, usize, f64) {
    let pos = (pixel / STRIDE as f64 - 0.5).clamp(0.0, (size - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(size - 1);
    (lo, hi, pos - lo as f64)
}

/// Sample taps for a `p × p` grid over `bbox`, row-major.
pub fn roi_sample_points(height: usize, width: usize, bbox: &BBox, p: usize) -> Result<Vec<SamplePoint>> {
    if !bbox.is_valid() {
        return Err(Error::InvalidInput(format!("degenerate ROI box {:?}", bbox.to_array())));
    }
    if height == 0 || width == 0 || p == 0 {
        return Err(Error::InvalidInput("empty feature map or ROI grid".into()));
    }
    let (bh, bw) = (bbox.height() / p as f64, bbox.width() / p as f64);
    let mut pts = Vec::with_capacity(p * p);
    for a in 0..p {
        let (y0, y1, ly) = axis_tap(bbox.y_min + (a as f64 + 0.5) * bh, height);
        for b in 0..p {
            let (x0, x1, lx) = axis_tap(bbox.x_min + (b as f64 + 0.5) * bw, width);
            pts.push(SamplePoint { y0, y1, x0, x1, ly, lx });
        }
    }
    Ok(pts)
}

/// Extracts the `C × P × P` ROI feature of `bbox` (image pixels).
pub fn roi_extract(features: &FeatureMap, bbox: &BBox, p: usize) -> Result<FeatureMap> {
    let pts = roi_sample_points(features.height, features.width, bbox, p)?;
    let mut out = FeatureMap::zeros(features.channels, p, p);
    for c in 0..features.channels {
        for (k, s) in pts.iter().enumerate() {
            let v = (1.0 - s.ly) * (1.0 - s.lx) * features.at(c, s.y0, s.x0)
                + (1.0 - s.ly) * s.lx * features.at(c, s.y0, s.x1)
                + s.ly * (1.0 - s.lx) * features.at(c, s.y1, s.x0)
                + s.ly * s.lx * features.at(c, s.y1, s.x1);
            out.data[c * p * p + k] = v;
        }
    }
    Ok(out)
}

/// Scatters `d_roi` back onto `d_features` with the forward weights. Box
/// coordinates are constants.
pub fn roi_backward(d_features: &mut FeatureMap, bbox: &BBox, d_roi: &FeatureMap) -> Result<()> {
    let p = d_roi.height;
    let pts = roi_sample_points(d_features.height, d_features.width, bbox, p)?;
    for c in 0..d_roi.channels {
        for (k, s) in pts.iter().enumerate() {
            let g = d_roi.data[c * p * p + k];
            *d_features.at_mut(c, s.y0, s.x0) += (1.0 - s.ly) * (1.0 - s.lx) * g;
            *d_features.at_mut(c, s.y0, s.x1) += (1.0 - s.ly) * s.lx * g;
            *d_features.at_mut(c, s.y1, s.x0) += s.ly * (1.0 - s.lx) * g;
            *d_features.at_mut(c, s.y1, s.x1) += s.ly * s.lx * g;
        }
    }
    Ok(())
}
