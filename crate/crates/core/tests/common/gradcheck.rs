//! Central finite-difference checks for every differentiable piece.
//!
//! Each suite returns the worst relative error seen over its instances.

use cascade_core::geometry::BBox;
use cascade_core::netcore::{
    global_avg_pool, global_avg_pool_backward, grl_backward, grl_forward, roi_backward, roi_extract, AlignmentMode,
    Backbone, DetectionHead, DetectionOutput, DomainClassifier, FeatureMap, MaskHead, ModelParams, Parameters,
    PoseHead, DETECTION_CHANNELS, POSE_OUTPUTS,
};
use cascade_core::objectives::{
    compose_losses, detection_loss, focal_domain_loss_logit, mask_loss_logits, pose_loss, AdaptConfig, ComposeOptions,
};
use cascade_core::scenegen::{DomainTag, ObjectClass, Pose};
use cascade_core::{rng, FEATURE_CHANNELS, ROI_SIZE};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-3;
/// Denominator floor: gradients below this are compared absolutely.
pub const FLOOR: f64 = 1e-6;
pub const INSTANCES: u64 = 20;
const COORDS: usize = 24;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn nudge<P: Parameters>(p: &mut P, index: usize, delta: f64) {
    let mut k = 0;
    p.visit_mut("", &mut |_, t| {
        if (k..k + t.len()).contains(&index) {
            t.data[index - k] += delta;
        }
        k += t.len();
    });
}

/// Worst error of `analytic` against central differences of `f` at
/// `coords` random parameter positions.
pub fn check_params<P: Parameters + Clone>(
    params: &P,
    analytic: &P,
    f: impl Fn(&P) -> f64,
    rng: &mut impl Rng,
    coords: usize,
) -> f64 {
    let mut offsets = Vec::new();
    let mut total = 0;
    params.visit("", &mut |_, t| {
        offsets.push((total, t.len()));
        total += t.len();
    });
    let flat = analytic.flatten();
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let (start, len) = offsets[rng.random_range(0..offsets.len())];
        let i = start + rng.random_range(0..len);
        let mut p = params.clone();
        nudge(&mut p, i, STEP);
        let up = f(&p);
        nudge(&mut p, i, -2.0 * STEP);
        let down = f(&p);
        worst = worst.max(rel_err(flat[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

/// Same for a plain vector input; `coords = None` checks every entry.
pub fn check_vec(
    x: &[f64],
    analytic: &[f64],
    f: impl Fn(&[f64]) -> f64,
    rng: &mut impl Rng,
    coords: Option<usize>,
) -> f64 {
    let idx: Vec<usize> = match coords {
        None => (0..x.len()).collect(),
        Some(c) => (0..c).map(|_| rng.random_range(0..x.len())).collect(),
    };
    let mut worst: f64 = 0.0;
    let mut v = x.to_vec();
    for i in idx {
        v[i] = x[i] + STEP;
        let up = f(&v);
        v[i] = x[i] - STEP;
        let down = f(&v);
        v[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize, scale: f64) -> FeatureMap {
    FeatureMap::from_vec(c, h, w, random_vec(rng, c * h * w, scale))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random box with corners inside `[0, size)` and sides of at least 2 px.
pub fn random_box(rng: &mut impl Rng, size: f64) -> BBox {
    let w = rng.random_range(2.0..size * 0.8);
    let h = rng.random_range(2.0..size * 0.8);
    let x = rng.random_range(0.0..size - w);
    let y = rng.random_range(0.0..size - h);
    BBox::new(x, y, x + w, y + h)
}

pub fn backbone() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/backbone", 0, inst);
        let mut net = Backbone::new();
        net.init(&mut r);
        let image = FeatureMap::from_vec(3, 8, 8, (0..192).map(|_| r.random::<f64>()).collect());
        let (out, cache) = net.forward(&image).unwrap();
        let w = random_vec(&mut r, out.data.len(), 1.0);
        let mut grad = net.zeros_like();
        net.backward(
            &cache,
            &FeatureMap::from_vec(out.channels, out.height, out.width, w.clone()),
            &mut grad,
        );
        let f = |p: &Backbone| dot(&p.forward(&image).unwrap().0.data, &w);
        worst = worst.max(check_params(&net, &grad, f, &mut r, COORDS));
    }
    worst
}

pub fn detection_head() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/detect", 0, inst);
        let mut head = DetectionHead::new();
        head.conv.init(&mut r);
        let x = random_map(&mut r, FEATURE_CHANNELS, 3, 3, 1.0);
        let (out, cache) = head.forward(&x).unwrap();
        let w = random_vec(&mut r, out.grid.data.len(), 1.0);
        let dy = FeatureMap::from_vec(DETECTION_CHANNELS, 3, 3, w.clone());
        let mut grad = head.zeros_like();
        let dx = head.backward(&cache, &dy, &mut grad);
        let f = |p: &DetectionHead| dot(&p.forward(&x).unwrap().0.grid.data, &w);
        worst = worst.max(check_params(&head, &grad, f, &mut r, COORDS));
        let fx = |v: &[f64]| {
            let m = FeatureMap::from_vec(FEATURE_CHANNELS, 3, 3, v.to_vec());
            dot(&head.forward(&m).unwrap().0.grid.data, &w)
        };
        worst = worst.max(check_vec(&x.data, &dx.data, fx, &mut r, Some(COORDS)));
    }
    worst
}

pub fn roi() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/roi", 0, inst);
        let x = random_map(&mut r, 2, 6, 6, 1.0);
        let bbox = random_box(&mut r, 28.0);
        let roi = roi_extract(&x, &bbox, ROI_SIZE).unwrap();
        let w = random_vec(&mut r, roi.data.len(), 1.0);
        let mut dx = FeatureMap::zeros(2, 6, 6);
        roi_backward(&mut dx, &bbox, &FeatureMap::from_vec(2, ROI_SIZE, ROI_SIZE, w.clone())).unwrap();
        let f = |v: &[f64]| {
            dot(
                &roi_extract(&FeatureMap::from_vec(2, 6, 6, v.to_vec()), &bbox, ROI_SIZE)
                    .unwrap()
                    .data,
                &w,
            )
        };
        worst = worst.max(check_vec(&x.data, &dx.data, f, &mut r, None));
    }
    worst
}

pub fn mask_head() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/mask", 0, inst);
        let mut head = MaskHead::new();
        head.conv1.init(&mut r);
        head.conv2.init(&mut r);
        head.out.init(&mut r);
        let x = random_map(&mut r, FEATURE_CHANNELS, ROI_SIZE, ROI_SIZE, 1.0);
        let (logits, cache) = head.forward(&x).unwrap();
        let w = random_vec(&mut r, logits.len(), 1.0);
        let mut grad = head.zeros_like();
        let dx = head.backward(&cache, &w, &mut grad);
        let f = |p: &MaskHead| dot(&p.forward(&x).unwrap().0, &w);
        worst = worst.max(check_params(&head, &grad, f, &mut r, COORDS));
        let fx = |v: &[f64]| {
            let m = FeatureMap::from_vec(FEATURE_CHANNELS, ROI_SIZE, ROI_SIZE, v.to_vec());
            dot(&head.forward(&m).unwrap().0, &w)
        };
        worst = worst.max(check_vec(&x.data, &dx.data, fx, &mut r, Some(COORDS)));
    }
    worst
}

pub fn pose_head() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/pose", 0, inst);
        let mut head = PoseHead::new();
        head.fc1.init(&mut r, 2f64.sqrt());
        head.fc2.init(&mut r, 1.0);
        let x = random_map(&mut r, FEATURE_CHANNELS, ROI_SIZE, ROI_SIZE, 1.0);
        let class = r.random_range(0..3);
        let bbox = random_box(&mut r, 64.0);
        let (out, cache) = head.forward(&x, class, &bbox).unwrap();
        let w = random_vec(&mut r, POSE_OUTPUTS, 1.0);
        let mut grad = head.zeros_like();
        let dx = head.backward(&cache, &[w[0], w[1], w[2]], &mut grad);
        assert_eq!(out.len(), POSE_OUTPUTS);
        let f = |p: &PoseHead| dot(&p.forward(&x, class, &bbox).unwrap().0, &w);
        worst = worst.max(check_params(&head, &grad, f, &mut r, COORDS));
        let fx = |v: &[f64]| {
            let m = FeatureMap::from_vec(FEATURE_CHANNELS, ROI_SIZE, ROI_SIZE, v.to_vec());
            dot(&head.forward(&m, class, &bbox).unwrap().0, &w)
        };
        worst = worst.max(check_vec(&x.data, &dx.data, fx, &mut r, Some(COORDS)));
    }
    worst
}

/// Domain classifier behind a reversal layer: the parameter gradient must
/// match differences of the plain loss, the input gradient must match
/// `−λ` times them.
pub fn domain_classifier() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/domain", 0, inst);
        let mode = [
            AlignmentMode::ClassWise,
            AlignmentMode::ClassAgnostic,
            AlignmentMode::ImageLevel,
        ][inst as usize % 3];
        let mut clf = DomainClassifier::new(mode).unwrap();
        clf.fc1.init(&mut r, 2f64.sqrt());
        clf.fc2.init(&mut r, 1.0);
        let x = random_vec(&mut r, clf.input_len(), 1.0);
        let class = r.random_range(0..3);
        let domain = if r.random::<bool>() {
            DomainTag::Source
        } else {
            DomainTag::Target
        };
        let lambda = r.random_range(0.01..1.0);
        let k = clf.select(class).unwrap();
        let loss = |c: &DomainClassifier, v: &[f64]| {
            let (logits, _) = c.forward(&grl_forward(v), 1).unwrap();
            focal_domain_loss_logit(logits[k], domain, 2.0).0
        };
        let (logits, cache) = clf.forward(&grl_forward(&x), 1).unwrap();
        let (_, dz) = focal_domain_loss_logit(logits[k], domain, 2.0);
        let mut d_logits = vec![0.0; logits.len()];
        d_logits[k] = dz;
        let mut grad = clf.zeros_like();
        let d_in = grl_backward(&clf.backward(&cache, &d_logits, &mut grad), lambda);
        worst = worst.max(check_params(&clf, &grad, |c| loss(c, &x), &mut r, COORDS));
        let unreversed: Vec<f64> = d_in.iter().map(|g| g / -lambda).collect();
        worst = worst.max(check_vec(&x, &unreversed, |v| loss(&clf, v), &mut r, Some(COORDS)));
    }
    worst
}

pub fn global_pool() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/gap", 0, inst);
        let x = random_map(&mut r, 4, 3, 5, 1.0);
        let w = random_vec(&mut r, 4, 1.0);
        let dx = global_avg_pool_backward(&w, 3, 5);
        let f = |v: &[f64]| dot(&global_avg_pool(&FeatureMap::from_vec(4, 3, 5, v.to_vec())), &w);
        worst = worst.max(check_vec(&x.data, &dx.data, f, &mut r, None));
    }
    worst
}

pub fn detection_objective() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/detloss", 0, inst);
        let (rows, cols) = (4, 4);
        let grid = random_map(&mut r, DETECTION_CHANNELS, rows, cols, 2.0);
        let n = r.random_range(0..4);
        let boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut r, 16.0)).collect();
        let classes: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let out = DetectionOutput { grid: grid.clone() };
        let g = detection_loss(&out, &boxes, &classes).grad;
        let f = |v: &[f64]| {
            let o = DetectionOutput {
                grid: FeatureMap::from_vec(DETECTION_CHANNELS, rows, cols, v.to_vec()),
            };
            detection_loss(&o, &boxes, &classes).total()
        };
        worst = worst.max(check_vec(&grid.data, &g.data, f, &mut r, None));
    }
    worst
}

pub fn mask_objective() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/maskloss", 0, inst);
        let z = random_vec(&mut r, 64, 4.0);
        let t: Vec<f64> = (0..64).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let (_, g) = mask_loss_logits(&z, &t);
        worst = worst.max(check_vec(&z, &g, |v| mask_loss_logits(v, &t).0, &mut r, None));
    }
    worst
}

pub fn pose_objective() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/poseloss", 0, inst);
        let class = ObjectClass::ALL[inst as usize % 3];
        let pred = [
            r.random_range(-2.0..2.0),
            r.random_range(-2.0..2.0),
            r.random_range(-1.0..2.0),
        ];
        let gt = Pose {
            angle: r.random_range(0.0..class.angle_period()),
            depth: r.random_range(1.0..4.0),
        };
        let g = pose_loss(&pred, &gt, class).grad;
        let f = |v: &[f64]| pose_loss(&[v[0], v[1], v[2]], &gt, class).total();
        worst = worst.max(check_vec(&pred, &g, f, &mut r, None));
    }
    worst
}

pub fn focal_objective() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/focal", 0, inst);
        let z = [r.random_range(-6.0..6.0)];
        let gamma = [0.0, 0.5, 1.0, 2.0, 5.0][inst as usize % 5];
        for d in [DomainTag::Source, DomainTag::Target] {
            let (_, g) = focal_domain_loss_logit(z[0], d, gamma);
            worst = worst.max(check_vec(
                &z,
                &[g],
                |v| focal_domain_loss_logit(v[0], d, gamma).0,
                &mut r,
                None,
            ));
        }
    }
    worst
}

/// The whole composed objective on tiny batches, reversal removed so the
/// result is a true gradient of `total`.
pub fn composed() -> f64 {
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut r = rng::stream("gradcheck/compose", 0, inst);
        let mode = AlignmentMode::ALL[inst as usize % 4];
        let params = ModelParams::init(inst, mode);
        let (source, target) = super::fixtures::tiny_batches(&mut r, 16, 2);
        let config = AdaptConfig {
            alignment_mode: mode,
            ..AdaptConfig::default()
        };
        let mut opts = ComposeOptions::new(&config, 0.1);
        opts.grl_multiplier = Some(1.0);
        let c = compose_losses(&params, &source, &target, &config, &opts).unwrap();
        let f = |p: &ModelParams| {
            compose_losses(p, &source, &target, &config, &opts)
                .unwrap()
                .losses
                .total
        };
        worst = worst.max(check_params(&params, &c.grads, f, &mut r, 40));
    }
    worst
}
