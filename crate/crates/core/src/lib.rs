//! Weakly-supervised domain adaptation for cascaded detection.
//!
//! A detector is trained with box/class labels in two domains while its
//! attribute heads (instance masks, object pose) only ever see source labels.
//! Optional adversarial alignment of per-object features, conditioned on the
//! ground-truth class, pushes the shared representation towards domain
//! invariance.
//!
//! Layout:
//!
//! * [`scenegen`] renders the procedural two-domain benchmark and owns the
//!   on-disk dataset format.
//! * [`netcore`] is the cascaded model with hand-written backward passes.
//! * [`objectives`] holds every loss and composes them into the training
//!   scalar.
//! * [`trainer`] runs SGD over the six training presets.
//! * [`evalkit`] implements IoU, greedy matching, AP and the pose detection
//!   score.
//! * [`expcli`] wires it all into run configs, reports and the `cascade` CLI.

pub mod error;
pub mod evalkit;
pub mod expcli;
pub mod geometry;
pub mod netcore;
pub mod objectives;
pub mod rng;
pub mod scenegen;
pub mod trainer;

pub use error::{Error, Result};

/// Image height and width in pixels.
pub const IMAGE_SIZE: usize = 64;
/// Number of object classes (arrow, tee, ellipse).
pub const NUM_CLASSES: usize = 3;
/// Backbone output stride.
pub const STRIDE: usize = 4;
/// Side length of the backbone feature map.
pub const FEATURE_SIZE: usize = IMAGE_SIZE / STRIDE;
/// Backbone output channels.
pub const FEATURE_CHANNELS: usize = 32;
/// ROI feature grid side.
pub const ROI_SIZE: usize = 8;
/// Mask head output side.
pub const MASK_SIZE: usize = 16;
