//! Greedy detection-to-ground-truth assignment for a single image.
//!
//! Detections are visited in descending score order (stable, so ties keep
//! input order). Each one takes the still-unmatched ground-truth box of highest
//! IoU among those at or above the threshold; ties in IoU go to the earlier
//! ground-truth box. There are no crowd or ignore regions.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub score: f64,
    pub is_tp: bool,
    pub matched_annotation_id: Option<u64>,
    pub iou_at_match: Option<f64>,
}

/// Labelled detections of one image, in evaluation (descending score) order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchRecord {
    pub entries: Vec<MatchEntry>,
    pub total_gt_count: usize,
}

impl MatchRecord {
    pub fn tp_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_tp).count()
    }
}

/// A scored predicted box.
pub trait Scored {
    fn score(&self) -> f64;
    fn bbox(&self) -> &BoundingBox;
}

/// A ground-truth box with its annotation id.
pub trait Labeled {
    fn annotation_id(&self) -> u64;
    fn bbox(&self) -> &BoundingBox;
}

impl Scored for crate::coco::Detection {
    fn score(&self) -> f64 {
        self.score
    }
    fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

impl Labeled for crate::coco::Annotation {
    fn annotation_id(&self) -> u64 {
        self.id
    }
    fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

impl<T: Labeled + ?Sized> Labeled for &T {
    fn annotation_id(&self) -> u64 {
        (**self).annotation_id()
    }
    fn bbox(&self) -> &BoundingBox {
        (**self).bbox()
    }
}

impl<T: Scored + ?Sized> Scored for &T {
    fn score(&self) -> f64 {
        (**self).score()
    }
    fn bbox(&self) -> &BoundingBox {
        (**self).bbox()
    }
}

/// Indices of `dets` in evaluation order.
pub fn score_order<D: Scored>(dets: &[D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()));
    order
}

/// Matches one image's detections against its ground truth at `threshold`
/// (`0 < threshold <= 1`).
pub fn match_image<D: Scored, G: Labeled>(dets: &[D], gts: &[G], threshold: f64) -> MatchRecord {
    debug_assert!(threshold > 0.0 && threshold <= 1.0);
    let mut taken = vec![false; gts.len()];
    let entries = score_order(dets)
        .into_iter()
        .map(|di| {
            let det = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let overlap = iou(det.bbox(), gt.bbox());
                if overlap >= threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            match best {
                Some((gi, overlap)) => {
                    taken[gi] = true;
                    MatchEntry {
                        score: det.score(),
                        is_tp: true,
                        matched_annotation_id: Some(gts[gi].annotation_id()),
                        iou_at_match: Some(overlap),
                    }
                }
                None => MatchEntry {
                    score: det.score(),
                    is_tp: false,
                    matched_annotation_id: None,
                    iou_at_match: None,
                },
            }
        })
        .collect();
    MatchRecord {
        entries,
        total_gt_count: gts.len(),
    }
}
