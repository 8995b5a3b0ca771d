//! Synthetic detector that perturbs ground truth.
//!
//! Each image gets its own [`SplitMix64`] stream keyed by `(seed, image_id)`,
//! so output never depends on image order. Within an image the draws are, in
//! order: for each annotation, one drop draw, then (if kept) x/y/w/h jitter
//! draws and one score draw; then a Poisson count of spurious boxes, each with
//! width, height, x, y and score draws.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{
    Annotation, Category, Detection, DetectionSet, GroundTruthDataset, ImageInfo, Provenance,
};
use crate::geometry::BoundingBox;
use crate::rng::SplitMix64;

/// Spurious box extents are drawn from this fraction range of the image size.
pub const SPURIOUS_EXTENT: (f64, f64) = (0.05, 0.30);
/// Spurious box scores are uniform in `[0, SPURIOUS_MAX_SCORE)`.
pub const SPURIOUS_MAX_SCORE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockParams {
    pub jitter_frac: f64,
    pub drop_rate: f64,
    pub spurious_rate: f64,
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for MockParams {
    fn default() -> Self {
        Self {
            jitter_frac: 0.0,
            drop_rate: 0.0,
            spurious_rate: 0.0,
            score_noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid mock parameter `{0}`")]
pub struct InvalidMockParams(pub &'static str);

impl MockParams {
    pub fn validate(&self) -> Result<(), InvalidMockParams> {
        if !(self.jitter_frac.is_finite() && self.jitter_frac >= 0.0) {
            return Err(InvalidMockParams("jitter_frac"));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(InvalidMockParams("drop_rate"));
        }
        if !(self.spurious_rate.is_finite() && self.spurious_rate >= 0.0) {
            return Err(InvalidMockParams("spurious_rate"));
        }
        if !(0.0..=1.0).contains(&self.score_noise) {
            return Err(InvalidMockParams("score_noise"));
        }
        Ok(())
    }
}

fn detect_image(im: &ImageInfo, anns: &[&Annotation], p: &MockParams, out: &mut Vec<Detection>) {
    let mut rng = SplitMix64::for_stream(p.seed, im.id);
    for a in anns {
        let dropped = rng.next_f64() < p.drop_rate;
        if dropped {
            continue;
        }
        let b = a.bbox;
        let mut jitter = |extent: f64| rng.uniform(-p.jitter_frac, p.jitter_frac) * extent;
        let moved = BoundingBox::new(
            b.x + jitter(b.w),
            b.y + jitter(b.h),
            b.w + jitter(b.w),
            b.h + jitter(b.h),
        );
        let score = 1.0 - rng.uniform(0.0, p.score_noise);
        if moved.check_shape().is_err() {
            continue;
        }
        let Some(bbox) = (if moved.is_within(im.width, im.height) {
            Some(moved)
        } else {
            moved.clip_to(im.width, im.height)
        }) else {
            continue;
        };
        out.push(Detection {
            image_id: im.id,
            bbox,
            score,
            phrase: "mock".to_string(),
        });
    }
    let spurious = rng.poisson(p.spurious_rate);
    let (lo, hi) = SPURIOUS_EXTENT;
    for _ in 0..spurious {
        let w = rng.uniform(lo, hi) * im.width;
        let h = rng.uniform(lo, hi) * im.height;
        let x = rng.uniform(0.0, im.width - w);
        let y = rng.uniform(0.0, im.height - h);
        let score = rng.uniform(0.0, SPURIOUS_MAX_SCORE);
        out.push(Detection {
            image_id: im.id,
            bbox: BoundingBox::new(x, y, w, h),
            score,
            phrase: "mock".to_string(),
        });
    }
}

/// Perturbs `gt` into a detection set. `provenance.seed` should equal `p.seed`.
pub fn mock_detect(
    gt: &GroundTruthDataset,
    p: &MockParams,
    provenance: Provenance,
) -> DetectionSet {
    let by_image = gt.annotations_by_image();
    let mut detections = Vec::new();
    for im in &gt.images {
        let anns = by_image.get(&im.id).map(Vec::as_slice).unwrap_or(&[]);
        detect_image(im, anns, p, &mut detections);
    }
    DetectionSet {
        provenance,
        detections,
    }
}

/// A reproducible single-category dataset: `n_images` images of 640x480, each
/// with one to `max_boxes` non-overlapping boxes.
pub fn synthetic_dataset(n_images: usize, max_boxes: usize, seed: u64) -> GroundTruthDataset {
    let (width, height) = (640.0, 480.0);
    let mut rng = SplitMix64::new(seed);
    let mut images = Vec::with_capacity(n_images);
    let mut annotations = Vec::new();
    for i in 0..n_images {
        let image_id = i as u64 + 1;
        images.push(ImageInfo {
            id: image_id,
            file_name: format!("img_{image_id:04}.jpg"),
            width,
            height,
        });
        // one column band per box keeps boxes disjoint
        let n = 1 + rng.below(max_boxes.max(1) as u64) as usize;
        let band = width / n as f64;
        for k in 0..n {
            let w = rng.uniform(0.4, 0.8) * band;
            let h = rng.uniform(0.2, 0.5) * height;
            let x = k as f64 * band + rng.uniform(0.0, band - w);
            let y = rng.uniform(0.0, height - h);
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: 1,
                bbox: BoundingBox::new(x, y, w, h),
            });
        }
    }
    GroundTruthDataset {
        images,
        annotations,
        categories: vec![Category {
            id: 1,
            name: "muzzle".to_string(),
        }],
    }
}
