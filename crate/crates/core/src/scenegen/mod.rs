//! Procedural two-domain benchmark: scene sampling, rasterization,
//! annotation and the on-disk dataset format.

mod annotation;
mod dataset;
mod presets;
mod render;
mod sample;
pub mod shapes;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, NUM_CLASSES};

pub use annotation::{derive_annotation, Annotation, Attributes, BinaryMask, Pose, WeakLabels};
pub use dataset::{
    read_manifest, write_dataset, AccessLog, AccessSnapshot, Dataset, DatasetManifest, Split, WriteOutcome,
};
pub use presets::{fog_like, syn2real_like, ShiftPreset};
pub use render::{render_scene, RenderedScene, RgbImage, FOG_GRAY};
pub use sample::sample_scene;

/// Object class. The discriminant is the class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Arrow = 0,
    Tee = 1,
    Ellipse = 2,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [ObjectClass::Arrow, ObjectClass::Tee, ObjectClass::Ellipse];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("class id {id} out of range")))
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Arrow => "arrow",
            ObjectClass::Tee => "tee",
            ObjectClass::Ellipse => "ellipse",
        }
    }

    /// Upper end of the canonical angle range `[0, period)`.
    pub fn angle_period(self) -> f64 {
        match self {
            ObjectClass::Ellipse => PI,
            _ => 2.0 * PI,
        }
    }

    /// Rotational symmetry order used when folding angles.
    pub fn symmetry_order(self) -> f64 {
        match self {
            ObjectClass::Ellipse => 2.0,
            _ => 1.0,
        }
    }

    /// Maps any angle into the canonical range of this class.
    pub fn canonical_angle(self, angle: f64) -> f64 {
        let period = self.angle_period();
        let a = angle.rem_euclid(period);
        // rem_euclid can return `period` itself for tiny negative inputs
        if a >= period {
            0.0
        } else {
            a
        }
    }

    /// Smallest absolute angular difference after symmetry folding.
    pub fn folded_angle_error(self, a: f64, b: f64) -> f64 {
        let period = self.angle_period();
        let d = (a - b).rem_euclid(period);
        d.min(period - d)
    }
}

pub const MIN_DEPTH: f64 = 1.0;
pub const MAX_DEPTH: f64 = 4.0;
pub const MAX_OBJECTS: usize = 4;
/// Pairwise box IoU allowed between objects of one scene.
pub const MAX_PAIR_IOU: f64 = 0.3;
/// Objects whose visible mask is smaller than this are not annotated.
pub const MIN_MASK_PIXELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    pub center: (f64, f64),
    pub base_size: f64,
    /// Canonical angle in radians.
    pub angle: f64,
    pub depth: f64,
}

impl ObjectSpec {
    pub fn rendered_size(&self) -> f64 {
        self.base_size / self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn name(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub background_seed: u64,
    pub domain_tag: DomainTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterLevel {
    None,
    Low,
    High,
}

impl ClutterLevel {
    pub fn stroke_count(self) -> usize {
        match self {
            ClutterLevel::None => 0,
            ClutterLevel::Low => 3,
            ClutterLevel::High => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Full,
    Weak,
}

/// Rendering and label-distribution parameters of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    /// Fill color per class, RGB in `[0, 1]`.
    pub palette: [[f64; 3]; NUM_CLASSES],
    pub background: [f64; 3],
    pub noise_sigma: f64,
    pub fog_alpha: f64,
    pub brightness_shift: f64,
    pub clutter_level: ClutterLevel,
    pub class_frequencies: [f64; NUM_CLASSES],
    pub label_mode: LabelMode,
    /// Object size at depth 1, per class, in pixels.
    pub base_sizes: [f64; NUM_CLASSES],
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.palette.iter().flatten().chain(&self.background).all(|&v| unit(v)) {
            return Err(Error::Config("palette and background must lie in [0, 1]".into()));
        }
        if !unit(self.noise_sigma) {
            return Err(Error::Config("noise_sigma must lie in [0, 1]".into()));
        }
        if !unit(self.fog_alpha) {
            return Err(Error::Config("fog_alpha must lie in [0, 1]".into()));
        }
        if !(-0.3..=0.3).contains(&self.brightness_shift) {
            return Err(Error::Config("brightness_shift must lie in [-0.3, 0.3]".into()));
        }
        if self.class_frequencies.iter().any(|&f| f.is_nan() || f < 0.0) {
            return Err(Error::Config("class_frequencies must be non-negative".into()));
        }
        let sum: f64 = self.class_frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class_frequencies must sum to 1 (got {sum})")));
        }
        if self.base_sizes.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::Config("base_sizes must be positive".into()));
        }
        Ok(())
    }
}
