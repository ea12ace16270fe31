use serde::{Deserialize, Serialize};

use super::{ClutterLevel, DomainConfig, LabelMode};

/// Source/target domain pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPreset {
    pub name: String,
    pub source: DomainConfig,
    pub target: DomainConfig,
}

const BASE_SIZES: [f64; 3] = [36.0, 32.0, 34.0];

/// Clean, saturated synthetic source against a recolored, noisy, cluttered
/// target. With `skew` the target class frequencies become (0.5, 0.3, 0.2).
pub fn syn2real_like(skew: bool) -> ShiftPreset {
    let source = DomainConfig {
        palette: [[0.85, 0.25, 0.20], [0.20, 0.75, 0.30], [0.25, 0.35, 0.85]],
        background: [0.45, 0.45, 0.45],
        noise_sigma: 0.0,
        fog_alpha: 0.0,
        brightness_shift: 0.0,
        clutter_level: ClutterLevel::None,
        class_frequencies: [1.0 / 3.0; 3],
        label_mode: LabelMode::Full,
        base_sizes: BASE_SIZES,
    };
    let target = DomainConfig {
        palette: [[0.70, 0.40, 0.60], [0.60, 0.62, 0.22], [0.30, 0.62, 0.68]],
        background: [0.30, 0.27, 0.22],
        noise_sigma: 0.06,
        fog_alpha: 0.0,
        brightness_shift: 0.08,
        clutter_level: ClutterLevel::High,
        class_frequencies: if skew { [0.5, 0.3, 0.2] } else { [1.0 / 3.0; 3] },
        label_mode: LabelMode::Weak,
        base_sizes: BASE_SIZES,
    };
    ShiftPreset {
        name: "syn2real-like".into(),
        source,
        target,
    }
}

/// Same layout and class distribution in both domains; the target only adds
/// depth-dependent fog.
pub fn fog_like() -> ShiftPreset {
    let source = DomainConfig {
        palette: [[0.80, 0.30, 0.25], [0.25, 0.70, 0.35], [0.30, 0.40, 0.80]],
        background: [0.35, 0.38, 0.35],
        noise_sigma: 0.03,
        fog_alpha: 0.0,
        brightness_shift: 0.0,
        clutter_level: ClutterLevel::Low,
        class_frequencies: [1.0 / 3.0; 3],
        label_mode: LabelMode::Full,
        base_sizes: BASE_SIZES,
    };
    let target = DomainConfig {
        fog_alpha: 0.6,
        label_mode: LabelMode::Weak,
        ..source.clone()
    };
    ShiftPreset {
        name: "fog-like".into(),
        source,
        target,
    }
}
