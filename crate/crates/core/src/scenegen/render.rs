use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::shapes::{outline, Outline};
use super::{DomainConfig, SceneSpec, MAX_DEPTH};
use crate::IMAGE_SIZE;

/// Fog blends toward this gray level.
pub const FOG_GRAY: f64 = 0.75;

/// 8-bit interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major `3 × H × W` floats in `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (p, rgb) in self.data.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                out[ch * hw + p] = rgb[ch] as f64 / 255.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub image: RgbImage,
    /// Visible (occlusion-clipped) coverage per object, in scene order.
    pub masks: Vec<Vec<bool>>,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn draw_clutter<R: Rng>(rng: &mut R, canvas: &mut [[f64; 3]], background: [f64; 3], strokes: usize) {
    let n = IMAGE_SIZE;
    for _ in 0..strokes {
        let color = background.map(|b| (b + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0));
        let shape = if rng.random_bool(0.5) {
            let (w, h) = (rng.random_range(1.0..5.0), rng.random_range(1.0..5.0));
            let (x, y) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
            Outline::Polygon(vec![(x, y), (x + w, y), (x + w, y + h), (x, y + h)])
        } else {
            let len = rng.random_range(6.0..14.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let (x, y) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
            let (dx, dy) = (theta.cos() * len, theta.sin() * len);
            let (nx, ny) = (-theta.sin() * 0.6, theta.cos() * 0.6);
            Outline::Polygon(vec![
                (x - nx, y - ny),
                (x + dx - nx, y + dy - ny),
                (x + dx + nx, y + dy + ny),
                (x + nx, y + ny),
            ])
        };
        for (i, on) in shape.rasterize(n, n).into_iter().enumerate() {
            if on {
                canvas[i] = color;
            }
        }
    }
}

/// Rasterizes `scene`: clutter, objects back to front, fog, brightness,
/// then sensor noise drawn from `rng`.
pub fn render_scene<R: Rng>(scene: &SceneSpec, config: &DomainConfig, rng: &mut R) -> RenderedScene {
    let n = IMAGE_SIZE;
    let mut canvas = vec![config.background; n * n];
    draw_clutter(rng, &mut canvas, config.background, config.clutter_level.stroke_count());

    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    // farthest first; stable for equal depths
    order.sort_by(|&a, &b| scene.objects[b].depth.total_cmp(&scene.objects[a].depth));

    let mut owner: Vec<Option<usize>> = vec![None; n * n];
    for &idx in &order {
        let obj = &scene.objects[idx];
        let color = config.palette[obj.class.id()];
        for (p, on) in outline(obj).rasterize(n, n).into_iter().enumerate() {
            if on {
                canvas[p] = color;
                owner[p] = Some(idx);
            }
        }
    }

    let masks = (0..scene.objects.len())
        .map(|idx| owner.iter().map(|o| *o == Some(idx)).collect())
        .collect();

    let noise = Normal::new(0.0, config.noise_sigma.max(0.0)).expect("finite sigma");
    let mut data = Vec::with_capacity(3 * n * n);
    for (p, rgb) in canvas.iter().enumerate() {
        let depth = owner[p].map_or(MAX_DEPTH, |i| scene.objects[i].depth);
        let fog = config.fog_alpha * depth / MAX_DEPTH;
        for &v in rgb {
            let mut v = (1.0 - fog) * v + fog * FOG_GRAY + config.brightness_shift;
            if config.noise_sigma > 0.0 {
                v += noise.sample(rng);
            }
            data.push(quantize(v));
        }
    }

    RenderedScene {
        image: RgbImage {
            height: n,
            width: n,
            data,
        },
        masks,
    }
}
