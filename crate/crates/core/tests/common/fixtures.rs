use cascade_core::geometry::BBox;
use cascade_core::netcore::FeatureMap;
use cascade_core::objectives::TrainSample;
use cascade_core::scenegen::{Attributes, BinaryMask, Pose, WeakLabels};
use rand::Rng;

/// Random labeled sample of side `size` with `1..=2` objects.
pub fn tiny_sample(rng: &mut impl Rng, size: usize, with_attributes: bool) -> TrainSample {
    let image = FeatureMap::from_vec(
        3,
        size,
        size,
        (0..3 * size * size).map(|_| rng.random::<f64>()).collect(),
    );
    let n = rng.random_range(1..=2);
    let mut boxes = Vec::new();
    let mut masks = Vec::new();
    let mut poses = Vec::new();
    for _ in 0..n {
        let w = rng.random_range(3..size / 2 + 2);
        let h = rng.random_range(3..size / 2 + 2);
        let x = rng.random_range(0..size - w);
        let y = rng.random_range(0..size - h);
        boxes.push(BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64));
        let mut m = BinaryMask::empty(size, size);
        for r in y..y + h {
            for c in x..x + w {
                m.data[r * size + c] = rng.random::<f64>() < 0.7;
            }
        }
        masks.push(m);
        poses.push(Pose {
            angle: rng.random_range(0.0..3.0),
            depth: rng.random_range(1.0..4.0),
        });
    }
    let classes = (0..n).map(|_| rng.random_range(0..3)).collect();
    let roi_boxes = boxes
        .iter()
        .map(|b| {
            let j = |rng: &mut dyn rand::RngCore| rng.random_range(-0.5..0.5);
            BBox::new(b.x_min + j(rng), b.y_min + j(rng), b.x_max + j(rng), b.y_max + j(rng))
        })
        .collect();
    TrainSample {
        image,
        labels: Some(WeakLabels { boxes, classes }),
        attributes: with_attributes.then_some(Attributes { masks, poses }),
        roi_boxes,
    }
}

/// `n` full-label source samples and `n` weak target samples.
pub fn tiny_batches(rng: &mut impl Rng, size: usize, n: usize) -> (Vec<TrainSample>, Vec<TrainSample>) {
    let source = (0..n).map(|_| tiny_sample(rng, size, true)).collect();
    let target = (0..n).map(|_| tiny_sample(rng, size, false)).collect();
    (source, target)
}
