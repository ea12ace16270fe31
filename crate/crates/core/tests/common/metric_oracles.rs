//! Brute-force re-implementations of the metrics and random-instance
//! drivers comparing them against the library.

use std::collections::HashSet;

use cascade_core::evalkit::{
    ap_from_labels, average_precision, box_iou, mask_iou, match_predictions, pose_detection_score, GroundTruth,
    MatchResult, PoseCriteria, Prediction,
};
use cascade_core::geometry::BBox;
use cascade_core::scenegen::{BinaryMask, ObjectClass, Pose};
use cascade_core::{rng, NUM_CLASSES};
use rand::Rng;

pub const TRIALS: u64 = 1000;

/// Integer-corner boxes: IoU by counting unit cells.
pub fn box_iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let cells = |r: &BBox| -> HashSet<(i64, i64)> {
        let mut s = HashSet::new();
        for y in r.y_min as i64..r.y_max as i64 {
            for x in r.x_min as i64..r.x_max as i64 {
                s.insert((x, y));
            }
        }
        s
    };
    let (ca, cb) = (cells(a), cells(b));
    let union = ca.union(&cb).count();
    if union == 0 {
        0.0
    } else {
        ca.intersection(&cb).count() as f64 / union as f64
    }
}

pub fn mask_iou_oracle(a: &BinaryMask, b: &BinaryMask) -> (f64, bool) {
    let set = |m: &BinaryMask| -> HashSet<usize> { m.data.iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect() };
    let (sa, sb) = (set(a), set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        (0.0, true)
    } else {
        (sa.intersection(&sb).count() as f64 / union as f64, false)
    }
}

/// Greedy matching written as "sort the candidates, take the first".
pub fn match_oracle(
    preds: &[Prediction],
    gts: &[GroundTruth],
    iou: impl Fn(&Prediction, &GroundTruth) -> f64,
    thr: f64,
) -> Vec<Option<usize>> {
    let mut used = HashSet::new();
    preds
        .iter()
        .map(|p| {
            let mut cands: Vec<(f64, usize)> = gts
                .iter()
                .enumerate()
                .filter(|(j, g)| !used.contains(j) && g.image == p.image && g.class_id == p.class_id)
                .map(|(j, g)| (iou(p, g), j))
                .filter(|(v, _)| *v >= thr)
                .collect();
            cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let pick = cands.first().map(|c| c.1);
            if let Some(j) = pick {
                used.insert(j);
            }
            pick
        })
        .collect()
}

/// AP by sweeping every score cut: interpolated precision at each recall
/// level is the best precision of any cut reaching at least that recall.
pub fn ap_oracle(labels: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let cuts: Vec<(f64, f64)> = (1..=sorted.len())
        .map(|k| {
            let tp = sorted[..k].iter().filter(|l| l.1).count() as f64;
            (tp / n_gt as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    for level in 1..=n_gt {
        let r = level as f64 / n_gt as f64;
        let best = cuts
            .iter()
            .filter(|c| c.0 >= r - 1e-12)
            .map(|c| c.1)
            .fold(0.0, f64::max);
        ap += best / n_gt as f64;
    }
    ap
}

pub fn map_oracle(preds: &[Prediction], gts: &[GroundTruth], tp: &[bool]) -> f64 {
    let mut aps = Vec::new();
    for c in 0..NUM_CLASSES {
        let n = gts.iter().filter(|g| g.class_id == c).count();
        if n == 0 {
            continue;
        }
        let labels: Vec<(f64, bool)> = preds
            .iter()
            .zip(tp)
            .filter(|(p, _)| p.class_id == c)
            .map(|(p, &t)| (p.score, t))
            .collect();
        aps.push(ap_oracle(&labels, n));
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

pub fn pose_ds_oracle(preds: &[Prediction], gts: &[GroundTruth], c: &PoseCriteria) -> f64 {
    let m = match_oracle(preds, gts, |p, g| box_iou_oracle(&p.bbox, &g.bbox), c.iou);
    let tp: Vec<bool> = preds
        .iter()
        .zip(&m)
        .map(|(p, mj)| {
            let Some(j) = *mj else { return false };
            let (a, b) = (p.pose.unwrap(), gts[j].pose.unwrap());
            let period = if p.class_id == 2 {
                std::f64::consts::PI
            } else {
                2.0 * std::f64::consts::PI
            };
            let mut d = (a.angle - b.angle).abs() % period;
            if d > period / 2.0 {
                d = period - d;
            }
            let angle_ok = d.to_degrees() <= c.angle_deg;
            let depth_ok = (a.depth - b.depth).abs() / b.depth <= c.relative_depth;
            angle_ok && depth_ok
        })
        .collect();
    map_oracle(preds, gts, &tp)
}

fn int_box(r: &mut impl Rng) -> BBox {
    let x = r.random_range(0..8) as f64;
    let y = r.random_range(0..8) as f64;
    BBox::new(x, y, x + r.random_range(1..6) as f64, y + r.random_range(1..6) as f64)
}

fn random_mask(r: &mut impl Rng) -> BinaryMask {
    let p = r.random_range(0.0..0.7);
    BinaryMask::new(8, 8, (0..64).map(|_| r.random::<f64>() < p).collect())
}

/// Up to 5 predictions and 4 ground truths over two images and two
/// classes, predictions sorted by descending score.
pub fn random_instance(r: &mut impl Rng) -> (Vec<Prediction>, Vec<GroundTruth>) {
    let classes = r.random_range(1..=NUM_CLASSES);
    let gts: Vec<GroundTruth> = (0..r.random_range(0..=4))
        .map(|_| {
            let class_id = r.random_range(0..classes);
            GroundTruth {
                image: r.random_range(0..2),
                class_id,
                bbox: int_box(r),
                mask: Some(random_mask(r)),
                pose: Some(Pose {
                    angle: r.random_range(0.0..ObjectClass::ALL[class_id].angle_period()),
                    depth: r.random_range(1.0..4.0),
                }),
            }
        })
        .collect();
    let mut preds: Vec<Prediction> = (0..r.random_range(0..=5))
        .map(|_| {
            // half of the predictions are perturbed copies of a ground truth
            let base = if !gts.is_empty() && r.random::<bool>() {
                Some(&gts[r.random_range(0..gts.len())])
            } else {
                None
            };
            let class_id = base.map_or_else(|| r.random_range(0..classes), |g| g.class_id);
            let bbox = match base {
                Some(g) if r.random::<bool>() => g.bbox,
                _ => int_box(r),
            };
            let pose = match base {
                Some(g) => {
                    let gp = g.pose.unwrap();
                    Pose {
                        angle: ObjectClass::ALL[class_id].canonical_angle(gp.angle + r.random_range(-0.5..0.5)),
                        depth: gp.depth * r.random_range(0.6..1.4),
                    }
                }
                None => Pose {
                    angle: r.random_range(0.0..3.0),
                    depth: r.random_range(1.0..4.0),
                },
            };
            Prediction {
                image: base.map_or_else(|| r.random_range(0..2), |g| g.image),
                class_id,
                score: r.random::<f64>(),
                bbox,
                mask: Some(match base {
                    Some(g) if r.random::<bool>() => g.mask.clone().unwrap(),
                    _ => random_mask(r),
                }),
                pose: Some(pose),
            }
        })
        .collect();
    preds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    (preds, gts)
}

fn tp_flags(m: &MatchResult) -> Vec<bool> {
    m.labels.iter().map(|l| l.2).collect()
}

/// Runs every metric against its oracle; returns the failures.
pub fn run_suite(trials: u64) -> Vec<String> {
    let mut failures = Vec::new();
    let crit = PoseCriteria::default();
    for t in 0..trials {
        let mut r = rng::stream("oracle/metrics", 0, t);
        let (preds, gts) = random_instance(&mut r);

        let (a, b) = (int_box(&mut r), int_box(&mut r));
        if (box_iou(&a, &b) - box_iou_oracle(&a, &b)).abs() > 1e-12 {
            failures.push(format!("box_iou trial {t}"));
        }
        let (ma, mb) = (random_mask(&mut r), random_mask(&mut r));
        let got = mask_iou(&ma, &mb).unwrap();
        if (got.value, got.degenerate) != mask_iou_oracle(&ma, &mb) {
            failures.push(format!("mask_iou trial {t}"));
        }

        let biou = |p: &Prediction, g: &GroundTruth| box_iou(&p.bbox, &g.bbox);
        let m = match_predictions(&preds, &gts, biou, 0.5);
        if m.matched != match_oracle(&preds, &gts, |p, g| box_iou_oracle(&p.bbox, &g.bbox), 0.5) {
            failures.push(format!("match_predictions trial {t}"));
        }
        let miou = |p: &Prediction, g: &GroundTruth| {
            mask_iou(p.mask.as_ref().unwrap(), g.mask.as_ref().unwrap())
                .unwrap()
                .value
        };
        let mm = match_predictions(&preds, &gts, miou, 0.5);
        if mm.matched
            != match_oracle(
                &preds,
                &gts,
                |p, g| mask_iou_oracle(p.mask.as_ref().unwrap(), g.mask.as_ref().unwrap()).0,
                0.5,
            )
        {
            failures.push(format!("mask matching trial {t}"));
        }

        let ap = average_precision(&m);
        if (ap.mean - map_oracle(&preds, &gts, &tp_flags(&m))).abs() > 1e-9 {
            failures.push(format!("average_precision trial {t}"));
        }
        let labels: Vec<(f64, bool)> = (0..r.random_range(0..=5))
            .map(|_| (r.random::<f64>(), r.random::<bool>()))
            .collect();
        let n_gt = labels.iter().filter(|l| l.1).count() + r.random_range(0..3);
        if (ap_from_labels(&labels, n_gt) - ap_oracle(&labels, n_gt)).abs() > 1e-9 {
            failures.push(format!("ap_from_labels trial {t}"));
        }

        let ds = pose_detection_score(&preds, &gts, &crit).mean;
        if (ds - pose_ds_oracle(&preds, &gts, &crit)).abs() > 1e-9 {
            failures.push(format!("pose_detection_score trial {t}"));
        }
    }
    failures
}
