use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sigmoid, silu_backward, silu_forward, Linear};
use super::tensor::{FeatureMap, Tensor};
use super::Parameters;
use crate::{Error, Result, FEATURE_CHANNELS, NUM_CLASSES, ROI_SIZE};

const HIDDEN: usize = 64;

/// Which adversarial alignment, if any, is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    #[default]
    None,
    ClassAgnostic,
    ClassWise,
    ImageLevel,
}

impl AlignmentMode {
    pub const ALL: [AlignmentMode; 4] = [
        AlignmentMode::None,
        AlignmentMode::ClassAgnostic,
        AlignmentMode::ClassWise,
        AlignmentMode::ImageLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlignmentMode::None => "none",
            AlignmentMode::ClassAgnostic => "class_agnostic",
            AlignmentMode::ClassWise => "class_wise",
            AlignmentMode::ImageLevel => "image_level",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// True for the modes that classify per-object ROI features.
    pub fn is_instance_level(self) -> bool {
        matches!(self, AlignmentMode::ClassAgnostic | AlignmentMode::ClassWise)
    }
}

/// Two fully connected layers emitting target-domain logits: one per class
/// in class-wise mode, a single one otherwise. The image-level variant reads
/// the globally pooled feature map instead of an ROI feature.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    pub mode: AlignmentMode,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct DomainClassifierCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    rows: usize,
}

impl DomainClassifier {
    /// `None` for `AlignmentMode::None`.
    pub fn new(mode: AlignmentMode) -> Option<Self> {
        let inputs = match mode {
            AlignmentMode::None => return None,
            AlignmentMode::ImageLevel => FEATURE_CHANNELS,
            _ => FEATURE_CHANNELS * ROI_SIZE * ROI_SIZE,
        };
        let outputs = if mode == AlignmentMode::ClassWise {
            NUM_CLASSES
        } else {
            1
        };
        Some(Self {
            mode,
            fc1: Linear::new(inputs, HIDDEN),
            fc2: Linear::new(HIDDEN, outputs),
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.fc1.init(rng, 2f64.sqrt());
        self.fc2.init(rng, 0.1);
    }

    pub fn input_len(&self) -> usize {
        self.fc1.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs()
    }

    /// Logits for `rows` inputs laid out back to back.
    pub fn forward(&self, x: &[f64], rows: usize) -> Result<(Vec<f64>, DomainClassifierCache)> {
        let pre = self.fc1.forward(x, rows)?;
        let hidden = silu_forward(&pre);
        let logits = self.fc2.forward(&hidden, rows)?;
        Ok((
            logits,
            DomainClassifierCache {
                input: x.to_vec(),
                pre,
                hidden,
                rows,
            },
        ))
    }

    /// Index of the logit that scores `class_id` within one row.
    pub fn select(&self, class_id: usize) -> Result<usize> {
        match self.mode {
            AlignmentMode::ClassWise if class_id >= NUM_CLASSES => {
                Err(Error::InvalidInput(format!("class id {class_id} out of range")))
            }
            AlignmentMode::ClassWise => Ok(class_id),
            _ => Ok(0),
        }
    }

    /// Target-domain probability of one input for `class_id`.
    pub fn selected_probability(&self, x: &[f64], class_id: usize) -> Result<f64> {
        let k = self.select(class_id)?;
        let (logits, _) = self.forward(x, 1)?;
        Ok(sigmoid(logits[k]))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, cache: &DomainClassifierCache, d_logits: &[f64], grad: &mut DomainClassifier) -> Vec<f64> {
        let mut dh = self
            .fc2
            .backward(&cache.hidden, d_logits, cache.rows, &mut grad.fc2, true)
            .expect("input grad");
        silu_backward(&cache.pre, &mut dh);
        self.fc1
            .backward(&cache.input, &dh, cache.rows, &mut grad.fc1, true)
            .expect("input grad")
    }
}

impl Parameters for DomainClassifier {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.fc1.visit(&format!("{prefix}/fc1"), f);
        self.fc2.visit(&format!("{prefix}/fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc1.visit_mut(&format!("{prefix}/fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}/fc2"), f);
    }
}

/// Gradient reversal: the identity going forward.
pub fn grl_forward(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// Gradient reversal going backward: scales by `-lambda`.
pub fn grl_backward(upstream: &[f64], lambda: f64) -> Vec<f64> {
    upstream.iter().map(|g| -lambda * g).collect()
}

pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let n = x.plane() as f64;
    x.data.chunks(x.plane()).map(|p| p.iter().sum::<f64>() / n).collect()
}

pub fn global_avg_pool_backward(d: &[f64], height: usize, width: usize) -> FeatureMap {
    let n = (height * width) as f64;
    let data = d
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / n, height * width))
        .collect();
    FeatureMap::from_vec(d.len(), height, width, data)
}
