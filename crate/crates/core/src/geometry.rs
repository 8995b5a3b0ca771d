//! Axis-aligned boxes in absolute pixel coordinates.
//!
//! Boxes are stored COCO-style as `[x, y, w, h]` with the origin at the image's
//! top-left corner. Coordinates are continuous: a box's area is `w * h`, with no
//! "+1" pixel convention, so two boxes that share only an edge have IoU 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A box in COCO `xywh` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Corner form, used only while computing overlaps and clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Corners {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BoxError {
    #[error("box has non-positive width or height")]
    NonPositiveExtent,
    #[error("box has a non-finite coordinate")]
    NonFiniteField,
}

/// Outcome of [`validate_box`] for a box that was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoxCheck {
    /// The box extends past the image; a warning, not a rejection.
    pub out_of_bounds: bool,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    fn corners(&self) -> Corners {
        Corners {
            x1: self.x,
            y1: self.y,
            x2: self.x + self.w,
            y2: self.y + self.h,
        }
    }

    fn from_corners(c: Corners) -> Self {
        Self {
            x: c.x1,
            y: c.y1,
            w: c.x2 - c.x1,
            h: c.y2 - c.y1,
        }
    }

    /// Checks only the intrinsic invariants (finite fields, positive extent).
    pub fn check_shape(&self) -> Result<(), BoxError> {
        if ![self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(BoxError::NonFiniteField);
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(BoxError::NonPositiveExtent);
        }
        Ok(())
    }

    pub fn is_within(&self, image_w: f64, image_h: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= image_w && self.bottom() <= image_h
    }

    /// Intersects the box with the image rectangle. Returns `None` when
    /// nothing of positive area is left.
    pub fn clip_to(&self, image_w: f64, image_h: f64) -> Option<Self> {
        let c = self.corners();
        let clipped = Corners {
            x1: c.x1.clamp(0.0, image_w),
            y1: c.y1.clamp(0.0, image_h),
            x2: c.x2.clamp(0.0, image_w),
            y2: c.y2.clamp(0.0, image_h),
        };
        let out = Self::from_corners(clipped);
        (out.w > 0.0 && out.h > 0.0).then_some(out)
    }
}

/// Accepts a box iff every field is finite and both extents are positive.
/// Boxes reaching past the image are accepted and flagged.
pub fn validate_box(b: &BoundingBox, image_w: f64, image_h: f64) -> Result<BoxCheck, BoxError> {
    b.check_shape()?;
    Ok(BoxCheck {
        out_of_bounds: !b.is_within(image_w, image_h),
    })
}

/// Intersection over union of two validated boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let iw = ca.x2.min(cb.x2) - ca.x1.max(cb.x1);
    let ih = ca.y2.min(cb.y2) - ca.y1.max(cb.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
