//! Structural identities of the composed objective. Each check returns the
//! first violation it finds.

use cascade_core::netcore::{grl_backward, AlignmentMode, ModelParams, Parameters};
use cascade_core::objectives::{
    compose_losses, focal_domain_loss, focal_domain_loss_logit, AdaptConfig, ComposeOptions, TrainSample,
};
use cascade_core::rng;
use cascade_core::scenegen::DomainTag;
use rand::Rng;

use super::fixtures::tiny_batches;

pub type Check = Result<(), String>;

const ALIGNED: [AlignmentMode; 3] = [
    AlignmentMode::ClassWise,
    AlignmentMode::ClassAgnostic,
    AlignmentMode::ImageLevel,
];

pub fn setup(mode: AlignmentMode, seed: u64) -> (ModelParams, Vec<TrainSample>, Vec<TrainSample>, AdaptConfig) {
    let mut r = rng::stream("test/compose", seed, 0);
    let (s, t) = tiny_batches(&mut r, 16, 3);
    let config = AdaptConfig {
        alignment_mode: mode,
        ..AdaptConfig::default()
    };
    (ModelParams::init(seed, mode), s, t, config)
}

fn all_zero(p: &impl Parameters) -> bool {
    p.flatten().iter().all(|&g| g == 0.0)
}

pub fn joint_is_source_plus_target() -> Check {
    for (i, mode) in AlignmentMode::ALL.into_iter().enumerate() {
        let (p, s, t, cfg) = setup(mode, i as u64);
        let c = compose_losses(&p, &s, &t, &cfg, &ComposeOptions::new(&cfg, 0.05)).map_err(|e| e.to_string())?;
        let l = c.losses;
        let gap = (l.joint - (l.det_src + l.att_src + l.det_tgt + l.att_tgt)).abs();
        if gap > 1e-9 {
            return Err(format!("{mode:?}: joint differs from source + target by {gap:e}"));
        }
        if (l.total - (l.joint + cfg.lambda_adv * l.adv)).abs() > 1e-12 || !l.is_finite() {
            return Err(format!("{mode:?}: total {} is not joint + λ·adv", l.total));
        }
        if mode == AlignmentMode::None && (l.total != l.joint || l.adv != 0.0) {
            return Err("unaligned objective carries an adversarial term".into());
        }
        if mode != AlignmentMode::None && l.adv <= 0.0 {
            return Err(format!("{mode:?}: adversarial loss {}", l.adv));
        }
    }
    Ok(())
}

pub fn focal_zero_gamma_is_cross_entropy() -> Check {
    let mut r = rng::stream("test/focal-ce", 0, 0);
    for _ in 0..1000 {
        let p: f64 = r.random_range(1e-4..1.0 - 1e-4);
        let (d, ce) = if r.random::<bool>() {
            (DomainTag::Target, -p.ln())
        } else {
            (DomainTag::Source, -(1.0 - p).ln())
        };
        let z = (p / (1.0 - p)).ln();
        let worst = (focal_domain_loss(p, d, 0.0) - ce)
            .abs()
            .max((focal_domain_loss_logit(z, d, 0.0).0 - ce).abs());
        if worst > 1e-12 {
            return Err(format!("p = {p}: focal differs from cross-entropy by {worst:e}"));
        }
    }
    Ok(())
}

/// With λ_adv = 0 the detector and attribute gradients equal those of an
/// unaligned model bit for bit.
pub fn zero_lambda_adv_is_no_alignment() -> Check {
    for mode in ALIGNED {
        let (p, s, t, mut cfg) = setup(mode, 4);
        cfg.lambda_adv = 0.0;
        let with = compose_losses(&p, &s, &t, &cfg, &ComposeOptions::new(&cfg, 0.1)).map_err(|e| e.to_string())?;
        let mut plain = p.clone();
        plain.delta.classifier = None;
        let none_cfg = AdaptConfig {
            alignment_mode: AlignmentMode::None,
            ..cfg
        };
        let without = compose_losses(&plain, &s, &t, &none_cfg, &ComposeOptions::new(&none_cfg, 0.1))
            .map_err(|e| e.to_string())?;
        if with.grads.theta.flatten() != without.grads.theta.flatten() {
            return Err(format!("{mode:?}: θ gradients differ"));
        }
        if with.grads.omega.flatten() != without.grads.omega.flatten() {
            return Err(format!("{mode:?}: ω gradients differ"));
        }
        if !all_zero(&with.grads.delta) {
            return Err(format!("{mode:?}: δ moved with λ_adv = 0"));
        }
    }
    Ok(())
}

/// δ gets nothing from the supervised terms, ω nothing from the adversarial one.
pub fn gradient_partition() -> Check {
    for mode in ALIGNED {
        let (p, s, t, cfg) = setup(mode, 7);
        let base = ComposeOptions::new(&cfg, 0.1);
        let sup =
            compose_losses(&p, &s, &t, &cfg, &ComposeOptions { adv: false, ..base }).map_err(|e| e.to_string())?;
        if !all_zero(&sup.grads.delta) {
            return Err(format!("{mode:?}: δ receives gradient from the supervised losses"));
        }
        let adv_only = ComposeOptions {
            det_src: false,
            att_src: false,
            det_tgt: false,
            ..base
        };
        let adv = compose_losses(&p, &s, &t, &cfg, &adv_only).map_err(|e| e.to_string())?;
        if !all_zero(&adv.grads.omega) {
            return Err(format!("{mode:?}: ω receives gradient from the adversarial loss"));
        }
        if all_zero(&adv.grads.delta) || all_zero(&adv.grads.theta.backbone) {
            return Err(format!("{mode:?}: adversarial loss reaches neither δ nor the backbone"));
        }
    }
    Ok(())
}

/// Reversal multiplies the backbone gradient by exactly −λ and leaves δ alone.
pub fn grl_scaling_is_exact() -> Check {
    for (x, lambda) in [(2.0, 0.1), (-3.5, 0.25), (1e-3, 1.0)] {
        if grl_backward(&[x], lambda) != vec![-lambda * x] {
            return Err(format!("grl_backward({x}, {lambda})"));
        }
    }
    for mode in ALIGNED {
        let (p, s, t, cfg) = setup(mode, 11);
        let lambda = 0.25;
        let adv_only = ComposeOptions {
            det_src: false,
            att_src: false,
            det_tgt: false,
            ..ComposeOptions::new(&cfg, lambda)
        };
        let reversed = compose_losses(&p, &s, &t, &cfg, &adv_only).map_err(|e| e.to_string())?;
        let removed = compose_losses(
            &p,
            &s,
            &t,
            &cfg,
            &ComposeOptions {
                grl_multiplier: Some(1.0),
                ..adv_only
            },
        )
        .map_err(|e| e.to_string())?;
        let worst = reversed
            .grads
            .theta
            .flatten()
            .iter()
            .zip(removed.grads.theta.flatten())
            .map(|(x, y)| (x - (-lambda) * y).abs() / y.abs().max(1e-300))
            .fold(0.0, f64::max);
        if worst >= 1e-12 {
            return Err(format!("{mode:?}: θ gradient off −λ scaling by {worst:e}"));
        }
        if reversed.grads.delta != removed.grads.delta {
            return Err(format!("{mode:?}: reversal changed δ gradients"));
        }
    }
    Ok(())
}
