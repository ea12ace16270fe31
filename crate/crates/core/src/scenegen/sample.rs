use rand::Rng;

use super::shapes::outline;
use super::{
    DomainConfig, DomainTag, ObjectClass, ObjectSpec, SceneSpec, MAX_DEPTH, MAX_OBJECTS, MAX_PAIR_IOU, MIN_DEPTH,
};
use crate::{Error, Result, IMAGE_SIZE};

const PLACEMENT_ATTEMPTS: usize = 100;

fn sample_class<R: Rng>(rng: &mut R, frequencies: &[f64]) -> ObjectClass {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_nonzero = 0;
    for (id, &f) in frequencies.iter().enumerate() {
        if f > 0.0 {
            last_nonzero = id;
        }
        cumulative += f;
        if u < cumulative && f > 0.0 {
            return ObjectClass::ALL[id];
        }
    }
    ObjectClass::ALL[last_nonzero]
}

/// Places every object uniformly such that its outline fits the image.
/// Returns `false` if some object cannot fit at all.
fn place<R: Rng>(rng: &mut R, objects: &mut [ObjectSpec]) -> bool {
    let size = IMAGE_SIZE as f64;
    for obj in objects.iter_mut() {
        obj.center = (0.0, 0.0);
        let ext = outline(obj).extent();
        let (lo_x, hi_x) = (-ext.x_min, size - ext.x_max);
        let (lo_y, hi_y) = (-ext.y_min, size - ext.y_max);
        if lo_x > hi_x || lo_y > hi_y {
            return false;
        }
        obj.center = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
    }
    true
}

fn overlaps_acceptable(objects: &[ObjectSpec]) -> bool {
    let boxes: Vec<_> = objects.iter().map(|o| outline(o).extent()).collect();
    boxes
        .iter()
        .enumerate()
        .all(|(i, a)| boxes[i + 1..].iter().all(|b| a.iou(b) <= MAX_PAIR_IOU))
}

/// Draws one scene from `config`.
///
/// Object positions are resampled until the pairwise IoU constraint holds;
/// after [`PLACEMENT_ATTEMPTS`] failures the last object is dropped.
pub fn sample_scene<R: Rng>(rng: &mut R, config: &DomainConfig, domain_tag: DomainTag) -> Result<SceneSpec> {
    config.validate()?;
    let k = rng.random_range(1..=MAX_OBJECTS);
    let mut objects: Vec<ObjectSpec> = (0..k)
        .map(|_| {
            let class = sample_class(rng, &config.class_frequencies);
            let angle = rng.random_range(0.0..class.angle_period());
            let depth = rng.random_range(MIN_DEPTH..=MAX_DEPTH);
            ObjectSpec {
                class,
                center: (0.0, 0.0),
                base_size: config.base_sizes[class.id()],
                angle: class.canonical_angle(angle),
                depth,
            }
        })
        .collect();
    let background_seed = rng.random();

    while !objects.is_empty() {
        for _ in 0..PLACEMENT_ATTEMPTS {
            if place(rng, &mut objects) && overlaps_acceptable(&objects) {
                return Ok(SceneSpec {
                    objects,
                    background_seed,
                    domain_tag,
                });
            }
        }
        objects.pop();
    }
    Err(Error::ImpossibleConfig(
        "no object placement satisfies the image bounds".into(),
    ))
}
