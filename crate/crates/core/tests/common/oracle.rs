//! Brute-force reference for matching, PR curves and 101-point AP, written
//! directly from the metric definitions and kept apart from the library.

#![allow(dead_code)]

use zsd_bench::coco::{
    Annotation, Category, Detection, DetectionSet, GroundTruthDataset, ImageInfo, Provenance,
};
use zsd_bench::geometry::BoundingBox;
use zsd_bench::rng::SplitMix64;

fn overlap(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

fn raw(b: &BoundingBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

/// TP flags for the detections of one image, in input order.
fn label_image(dets: &[(f64, [f64; 4])], gts: &[[f64; 4]], t: f64) -> Vec<bool> {
    let mut visit: Vec<usize> = (0..dets.len()).collect();
    // highest score first; equal scores keep input order
    for i in 1..visit.len() {
        let mut j = i;
        while j > 0 && dets[visit[j - 1]].0 < dets[visit[j]].0 {
            visit.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for &d in &visit {
        let mut pick: Option<usize> = None;
        let mut pick_iou = 0.0;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = overlap(dets[d].1, *gt);
            if v >= t && (pick.is_none() || v > pick_iou) {
                pick = Some(g);
                pick_iou = v;
            }
        }
        if let Some(g) = pick {
            taken[g] = true;
            tp[d] = true;
        }
    }
    tp
}

/// AP at one IoU threshold. `None` when the dataset has no ground truth.
pub fn ap(gt: &GroundTruthDataset, det: &DetectionSet, t: f64) -> Option<f64> {
    let total = gt.annotations.len();
    if total == 0 {
        return None;
    }
    // (score, image id, position in file, tp)
    let mut pooled: Vec<(f64, u64, usize, bool)> = Vec::new();
    for im in &gt.images {
        let gts: Vec<[f64; 4]> = gt
            .annotations
            .iter()
            .filter(|a| a.image_id == im.id)
            .map(|a| raw(&a.bbox))
            .collect();
        let idx: Vec<usize> = (0..det.detections.len())
            .filter(|&i| det.detections[i].image_id == im.id)
            .collect();
        let dets: Vec<(f64, [f64; 4])> = idx
            .iter()
            .map(|&i| (det.detections[i].score, raw(&det.detections[i].bbox)))
            .collect();
        let tp = label_image(&dets, &gts, t);
        // rank of each detection within its image after the per-image stable sort
        for (k, &i) in idx.iter().enumerate() {
            pooled.push((dets[k].0, im.id, i, tp[k]));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut points = Vec::with_capacity(pooled.len());
    let mut tps = 0usize;
    for (n, p) in pooled.iter().enumerate() {
        if p.3 {
            tps += 1;
        }
        points.push((tps as f64 / total as f64, tps as f64 / (n + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let level = k as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(r, _)| *r >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}

/// A random single-category instance within the stated bounds. Coordinates
/// and scores are coarse so that ties, touching boxes and duplicates occur.
pub fn random_instance(
    rng: &mut SplitMix64,
    max_images: u64,
    max_gt: u64,
    max_det: u64,
) -> (GroundTruthDataset, DetectionSet) {
    let n_images = 1 + rng.below(max_images);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut detections = Vec::new();
    let coarse_box = |rng: &mut SplitMix64| {
        let x = rng.below(16) as f64;
        let y = rng.below(16) as f64;
        let w = 1.0 + rng.below(20 - x as u64 - 1) as f64;
        let h = 1.0 + rng.below(20 - y as u64 - 1) as f64;
        BoundingBox::new(x, y, w, h)
    };
    let mut ids: Vec<u64> = (1..=n_images).map(|i| i * 7 % 13 + i * 13).collect();
    ids.sort_unstable();
    for &image_id in &ids {
        images.push(ImageInfo {
            id: image_id,
            file_name: format!("{image_id}.jpg"),
            width: 20.0,
            height: 20.0,
        });
        for _ in 0..rng.below(max_gt + 1) {
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: 1,
                bbox: coarse_box(rng),
            });
        }
        for _ in 0..rng.below(max_det + 1) {
            let bbox = if !annotations.is_empty() && rng.next_f64() < 0.5 {
                // near copy of some earlier GT box in this image, if any
                let own: Vec<&Annotation> = annotations
                    .iter()
                    .filter(|a| a.image_id == image_id)
                    .collect();
                if own.is_empty() {
                    coarse_box(rng)
                } else {
                    let g = own[rng.below(own.len() as u64) as usize].bbox;
                    let dx = rng.below(3) as f64 - 1.0;
                    BoundingBox::new((g.x + dx).max(0.0), g.y, g.w, g.h)
                }
            } else {
                coarse_box(rng)
            };
            detections.push(Detection {
                image_id,
                bbox,
                score: rng.below(5) as f64 / 4.0,
                phrase: String::new(),
            });
        }
    }
    // shuffle the detection file order across images
    for i in (1..detections.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        detections.swap(i, j);
    }
    let gt = GroundTruthDataset {
        images,
        annotations,
        categories: vec![Category {
            id: 1,
            name: "muzzle".into(),
        }],
    };
    let det = DetectionSet {
        provenance: provenance(),
        detections,
    };
    (gt, det)
}

pub fn provenance() -> Provenance {
    Provenance {
        backend: "test".into(),
        prompt: "cattle muzzle".into(),
        seed: 0,
        timestamp: "2024-01-01T00:00:00Z".into(),
        box_threshold: None,
        text_threshold: None,
    }
}
