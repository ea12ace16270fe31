//! SGD training over the six presets.
//!
//! | preset        | target batch     | target labels used   | alignment      |
//! |---------------|------------------|----------------------|----------------|
//! | `source_only` | none             | none                 | none           |
//! | `oracle`      | yes              | boxes, masks, poses  | none           |
//! | `uda_image`   | yes              | none (images only)   | image level    |
//! | `wsjt`        | yes              | boxes, classes       | none           |
//! | `wsjt_cafa`   | yes              | boxes, classes       | class-agnostic |
//! | `wsjt_cwfa`   | yes              | boxes, classes       | class-wise     |
//!
//! Source images are always fully supervised. Each step draws a batch per
//! active domain uniformly with replacement from a stream keyed by
//! `(seed, iteration)`, so a run resumed from a checkpoint replays exactly
//! the batches the uninterrupted run would have seen.

mod run;

pub use run::{run_prefix, run_training, HistoryRecord, RunPaths, TrainOutcome, CHECKPOINT_FILE, HISTORY_FILE};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::evalkit::image_tensor;
use crate::geometry::BBox;
use crate::netcore::{AlignmentMode, ModelParams, Parameters};
use crate::objectives::{compose_losses, AdaptConfig, ComposeOptions, LossBreakdown, TrainSample};
use crate::scenegen::Dataset;
use crate::{rng, Error, Result, IMAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    SourceOnly,
    Oracle,
    UdaImage,
    Wsjt,
    WsjtCafa,
    #[default]
    WsjtCwfa,
}

/// How a preset uses the target training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetUsage {
    None,
    ImagesOnly,
    Boxes,
    Full,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::SourceOnly,
        Preset::Oracle,
        Preset::UdaImage,
        Preset::Wsjt,
        Preset::WsjtCafa,
        Preset::WsjtCwfa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SourceOnly => "source_only",
            Preset::Oracle => "oracle",
            Preset::UdaImage => "uda_image",
            Preset::Wsjt => "wsjt",
            Preset::WsjtCafa => "wsjt_cafa",
            Preset::WsjtCwfa => "wsjt_cwfa",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn alignment_mode(self) -> AlignmentMode {
        match self {
            Preset::UdaImage => AlignmentMode::ImageLevel,
            Preset::WsjtCafa => AlignmentMode::ClassAgnostic,
            Preset::WsjtCwfa => AlignmentMode::ClassWise,
            _ => AlignmentMode::None,
        }
    }

    pub fn target_usage(self) -> TargetUsage {
        match self {
            Preset::SourceOnly => TargetUsage::None,
            Preset::Oracle => TargetUsage::Full,
            Preset::UdaImage => TargetUsage::ImagesOnly,
            _ => TargetUsage::Boxes,
        }
    }

    /// Composition switches for this preset at reversal scale `lambda_grl`.
    pub fn compose_options(self, adapt: &AdaptConfig, lambda_grl: f64) -> ComposeOptions {
        let usage = self.target_usage();
        ComposeOptions {
            det_tgt: matches!(usage, TargetUsage::Boxes | TargetUsage::Full),
            att_tgt: usage == TargetUsage::Full,
            adv: self.alignment_mode() != AlignmentMode::None,
            ..ComposeOptions::new(adapt, lambda_grl)
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Chosen per run, never read from config files.
    #[serde(skip)]
    pub preset: Preset,
    pub iterations: u64,
    /// Images per active domain per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `iterations` at which the learning rate decays.
    pub lr_decay_at: Vec<f64>,
    pub lr_decay_factor: f64,
    pub grad_clip: f64,
    /// Relative jitter of training ROI boxes (shift and scale).
    pub roi_jitter: f64,
    /// Chosen per run, never read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Evaluation snapshot every this many steps (0: final only).
    pub eval_interval: u64,
    /// Validation images used by intermediate snapshots (0: all).
    pub eval_images: usize,
    pub checkpoint_interval: u64,
    /// Loss record every this many steps.
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::default(),
            iterations: 20_000,
            batch_size: 8,
            learning_rate: 0.005,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_at: vec![0.6, 0.75],
            lr_decay_factor: 0.1,
            grad_clip: 10.0,
            roi_jitter: 0.1,
            seed: 0,
            eval_interval: 0,
            eval_images: 0,
            checkpoint_interval: 1000,
            log_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_decay_factor", self.lr_decay_factor),
            ("grad_clip", self.grad_clip),
            ("roi_jitter", self.roi_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.roi_jitter >= 0.5 {
            return bad(format!("roi_jitter must be below 0.5, got {}", self.roi_jitter));
        }
        if self.lr_decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("lr_decay_at entries must lie in [0, 1]".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive".into());
        }
        Ok(())
    }

    /// `adapt` with the preset's alignment mode.
    pub fn adapt(&self, adapt: &AdaptConfig) -> AdaptConfig {
        AdaptConfig {
            alignment_mode: self.preset.alignment_mode(),
            ..*adapt
        }
    }
}

/// Learning rate and reversal scale at `iteration`.
///
/// The learning rate drops by `lr_decay_factor` at each decay point reached;
/// the reversal scale ramps linearly from 0 to `lambda_grl` over the first
/// `grl_ramp` of training.
pub fn lambda_schedule(iteration: u64, config: &TrainConfig, adapt: &AdaptConfig) -> (f64, f64) {
    let total = config.iterations as f64;
    let it = iteration as f64;
    let decays = config.lr_decay_at.iter().filter(|&&f| it >= f * total).count();
    let lr = config.learning_rate * config.lr_decay_factor.powi(decays as i32);
    let ramp = adapt.grl_ramp * total;
    let grl = if ramp <= 0.0 {
        adapt.lambda_grl
    } else {
        adapt.lambda_grl * (it / ramp).min(1.0)
    };
    (lr, grl)
}

/// Model parameters and optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub momentum: ModelParams,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(seed: u64, mode: AlignmentMode) -> Self {
        let params = ModelParams::init(seed, mode);
        let momentum = params.zeros_like();
        Self {
            params,
            momentum,
            iteration: 0,
        }
    }
}

/// One domain's half of a step, with the dataset indices it came from.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub samples: Vec<TrainSample>,
}

/// `n` indices drawn uniformly with replacement from `0..len`.
pub fn sample_indices<R: Rng>(rng: &mut R, len: usize, n: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::MissingInput("cannot sample from an empty dataset".into()));
    }
    Ok((0..n).map(|_| rng.random_range(0..len)).collect())
}

/// Shifts the center and scales each side by up to `±jitter` relative to
/// the box size, then clips to the image.
pub fn jitter_box<R: Rng>(rng: &mut R, b: &BBox, jitter: f64) -> BBox {
    let (cx, cy) = b.center();
    let mut u = || {
        if jitter > 0.0 {
            rng.random_range(-jitter..jitter)
        } else {
            0.0
        }
    };
    let (dx, dy, sw, sh) = (u(), u(), u(), u());
    let j = BBox::from_center(
        cx + dx * b.width(),
        cy + dy * b.height(),
        b.width() * (1.0 + sw),
        b.height() * (1.0 + sh),
    );
    let c = j.clip(IMAGE_SIZE as f64, IMAGE_SIZE as f64);
    if c.is_valid() {
        c
    } else {
        *b
    }
}

fn load_batch<R: Rng>(
    rng: &mut R,
    dataset: &Dataset,
    batch_size: usize,
    labels: bool,
    attributes: bool,
    jitter: f64,
) -> Result<Batch> {
    let indices = sample_indices(rng, dataset.len(), batch_size)?;
    let mut samples = Vec::with_capacity(batch_size);
    for &i in &indices {
        let image = image_tensor(dataset.image(i)?);
        let labels = if labels { Some(dataset.labels(i)?.clone()) } else { None };
        let attributes = if attributes {
            Some(dataset.attributes(i)?.clone())
        } else {
            None
        };
        let roi_boxes = labels
            .as_ref()
            .map(|l| l.boxes.iter().map(|b| jitter_box(rng, b, jitter)).collect())
            .unwrap_or_default();
        samples.push(TrainSample {
            image,
            labels,
            attributes,
            roi_boxes,
        });
    }
    Ok(Batch { indices, samples })
}

/// Draws the source batch and, when the preset uses one, the target batch.
/// Only the label types the preset is entitled to are read.
pub fn make_batch<R: Rng>(
    source: &Dataset,
    target: Option<&Dataset>,
    rng: &mut R,
    config: &TrainConfig,
) -> Result<(Batch, Option<Batch>)> {
    let src = load_batch(rng, source, config.batch_size, true, true, config.roi_jitter)?;
    let usage = config.preset.target_usage();
    let tgt = match (usage, target) {
        (TargetUsage::None, _) => None,
        (_, None) => {
            return Err(Error::MissingInput(format!(
                "preset {} needs a target dataset",
                config.preset
            )))
        }
        (usage, Some(t)) => Some(load_batch(
            rng,
            t,
            config.batch_size,
            usage != TargetUsage::ImagesOnly,
            usage == TargetUsage::Full,
            config.roi_jitter,
        )?),
    };
    Ok((src, tgt))
}

/// One SGD-with-momentum step on the composed objective.
///
/// Weight decay is added to the gradient, the global gradient norm is
/// clipped, then `v ← μ·v + g` and `p ← p − lr·v`.
pub fn train_step(
    state: &mut TrainState,
    source: &Batch,
    target: Option<&Batch>,
    config: &TrainConfig,
    adapt: &AdaptConfig,
) -> Result<LossBreakdown> {
    let adapt = config.adapt(adapt);
    let (lr, grl) = lambda_schedule(state.iteration, config, &adapt);
    let options = config.preset.compose_options(&adapt, grl);
    let empty = Vec::new();
    let tgt = target.map_or(&empty, |b| &b.samples);
    let composed = compose_losses(&state.params, &source.samples, tgt, &adapt, &options)?;
    let losses = composed.losses;
    let mut grads = composed.grads;
    if !losses.is_finite() {
        return Err(Error::NonFinite {
            iteration: state.iteration,
            source_images: source.indices.clone(),
            target_images: target.map(|b| b.indices.clone()).unwrap_or_default(),
        });
    }

    let mut values = state.params.flatten().into_iter();
    grads.visit_mut("", &mut |_, g| {
        for v in &mut g.data {
            *v += config.weight_decay * values.next().expect("same structure");
        }
    });
    let norm = grads.sum_sq().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            iteration: state.iteration,
            source_images: source.indices.clone(),
            target_images: target.map(|b| b.indices.clone()).unwrap_or_default(),
        });
    }
    let scale = if config.grad_clip > 0.0 && norm > config.grad_clip {
        config.grad_clip / norm
    } else {
        1.0
    };

    let mut g_iter = grads.flatten().into_iter();
    state.momentum.visit_mut("", &mut |_, v| {
        for m in &mut v.data {
            *m = config.momentum * *m + scale * g_iter.next().expect("same structure");
        }
    });
    let mut v_iter = state.momentum.flatten().into_iter();
    state.params.visit_mut("", &mut |_, p| {
        for x in &mut p.data {
            *x -= lr * v_iter.next().expect("same structure");
        }
    });
    state.iteration += 1;
    Ok(losses)
}

/// Batch stream of a run: the step at `iteration` always sees the same
/// images and jitter.
pub fn step_rng(seed: u64, iteration: u64) -> rng::StreamRng {
    rng::stream("train/batch", seed, iteration)
}
