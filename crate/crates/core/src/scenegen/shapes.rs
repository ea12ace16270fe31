//! Object outlines in world (pixel) space and their rasterization.
//!
//! A pixel `(row, col)` is covered when its center `(col + 0.5, row + 0.5)`
//! lies inside the outline.

use super::{ObjectClass, ObjectSpec};
use crate::geometry::BBox;

/// Arrow pointing along +x in unit object coordinates.
const ARROW: [(f64, f64); 7] = [
    (-0.5, -0.12),
    (0.1, -0.12),
    (0.1, -0.32),
    (0.5, 0.0),
    (0.1, 0.32),
    (0.1, 0.12),
    (-0.5, 0.12),
];

/// Tee whose cross bar sits at the +x end.
const TEE: [(f64, f64); 8] = [
    (-0.5, -0.12),
    (0.25, -0.12),
    (0.25, -0.45),
    (0.5, -0.45),
    (0.5, 0.45),
    (0.25, 0.45),
    (0.25, 0.12),
    (-0.5, 0.12),
];

const ELLIPSE_SEMI_MAJOR: f64 = 0.5;
const ELLIPSE_SEMI_MINOR: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum Outline {
    Polygon(Vec<(f64, f64)>),
    Ellipse {
        center: (f64, f64),
        semi_major: f64,
        semi_minor: f64,
        angle: f64,
    },
}

pub fn canonical_vertices(class: ObjectClass) -> &'static [(f64, f64)] {
    match class {
        ObjectClass::Arrow => &ARROW,
        ObjectClass::Tee => &TEE,
        ObjectClass::Ellipse => &[],
    }
}

pub fn rotate_about(p: (f64, f64), center: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    (center.0 + c * dx - s * dy, center.1 + s * dx + c * dy)
}

pub fn outline(obj: &ObjectSpec) -> Outline {
    let size = obj.rendered_size();
    match obj.class {
        ObjectClass::Ellipse => Outline::Ellipse {
            center: obj.center,
            semi_major: ELLIPSE_SEMI_MAJOR * size,
            semi_minor: ELLIPSE_SEMI_MINOR * size,
            angle: obj.angle,
        },
        class => {
            let (s, c) = obj.angle.sin_cos();
            let verts = canonical_vertices(class)
                .iter()
                .map(|&(u, v)| {
                    let (u, v) = (u * size, v * size);
                    (obj.center.0 + c * u - s * v, obj.center.1 + s * u + c * v)
                })
                .collect();
            Outline::Polygon(verts)
        }
    }
}

impl Outline {
    /// Tight continuous bounding box of the outline.
    pub fn extent(&self) -> BBox {
        match self {
            Outline::Polygon(verts) => {
                let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for &(x, y) in verts {
                    b.x_min = b.x_min.min(x);
                    b.y_min = b.y_min.min(y);
                    b.x_max = b.x_max.max(x);
                    b.y_max = b.y_max.max(y);
                }
                b
            }
            Outline::Ellipse {
                center,
                semi_major,
                semi_minor,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let hx = ((semi_major * c).powi(2) + (semi_minor * s).powi(2)).sqrt();
                let hy = ((semi_major * s).powi(2) + (semi_minor * c).powi(2)).sqrt();
                BBox::new(center.0 - hx, center.1 - hy, center.0 + hx, center.1 + hy)
            }
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Outline::Polygon(verts) => polygon_contains(verts, x, y),
            Outline::Ellipse {
                center,
                semi_major,
                semi_minor,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - center.0, y - center.1);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / semi_major).powi(2) + (v / semi_minor).powi(2) <= 1.0
            }
        }
    }

    /// Row-major coverage grid of `height × width` pixels.
    pub fn rasterize(&self, height: usize, width: usize) -> Vec<bool> {
        let ext = self.extent();
        let row_lo = (ext.y_min.floor().max(0.0)) as usize;
        let col_lo = (ext.x_min.floor().max(0.0)) as usize;
        let row_hi = (ext.y_max.ceil().max(0.0) as usize).min(height);
        let col_hi = (ext.x_max.ceil().max(0.0) as usize).min(width);
        let mut grid = vec![false; height * width];
        for r in row_lo..row_hi {
            for c in col_lo..col_hi {
                grid[r * width + c] = self.contains(c as f64 + 0.5, r as f64 + 0.5);
            }
        }
        grid
    }
}

/// Even-odd point-in-polygon test.
pub fn polygon_contains(verts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > y) != (yj > y) {
            let x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
            if x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
