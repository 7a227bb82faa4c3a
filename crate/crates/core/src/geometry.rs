//! Bounding boxes in the unit reference frame and the localization measures
//! used to score generated boxes against ground truth.
//!
//! The frame places `(0,0)` at the top-left corner of the image and `(1,1)` at
//! the bottom-right corner. A box is stored as its two corners `(x, y)` and
//! `(x2, y2)` with `x <= x2` and `y <= y2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PixelBBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box {box_:?} does not fit inside a {width}x{height} image")]
    DimensionMismatch {
        box_: PixelBBox,
        width: u32,
        height: u32,
    },
    #[error("non-finite coordinate in input")]
    NonFiniteInput,
    #[error("ground-truth box has zero area")]
    DegenerateGroundTruth,
    #[error("both boxes have zero area")]
    BothDegenerate,
    #[error("invalid normalized box ({x}, {y}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },
}

/// Axis-aligned box in the unit reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBBox {
    x: f64,
    y: f64,
    x2: f64,
    y2: f64,
}

impl NormalizedBBox {
    /// Builds a box that is already canonical and inside the unit square.
    pub fn new(x: f64, y: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let invalid = |reason| GeometryError::InvalidBox {
            x,
            y,
            x2,
            y2,
            reason,
        };
        if ![x, y, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteInput);
        }
        if ![x, y, x2, y2].iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(invalid("component outside [0, 1]"));
        }
        if x > x2 || y > y2 {
            return Err(invalid("corners not in canonical order"));
        }
        Ok(Self { x, y, x2, y2 })
    }

    /// The full frame, `(0,0)-(1,1)`.
    pub const FULL_FRAME: NormalizedBBox = NormalizedBBox {
        x: 0.0,
        y: 0.0,
        x2: 1.0,
        y2: 1.0,
    };

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() == 0.0
    }

    /// Renders the box in the `(X,Y), (X',Y')` reply template.
    pub fn to_template(&self) -> String {
        format!("({},{}), ({},{})", self.x, self.y, self.x2, self.y2)
    }
}

/// A box produced from arbitrary corner input, with the adjustments recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalBBox {
    pub bbox: NormalizedBBox,
    /// At least one component was outside `[0, 1]` and was clamped.
    pub clamped: bool,
    /// Zero width or zero height.
    pub degenerate: bool,
}

/// Divides each pixel coordinate by the matching image dimension.
pub fn normalize_bbox(
    bbox: &PixelBBox,
    width: u32,
    height: u32,
) -> Result<NormalizedBBox, GeometryError> {
    let mismatch = || GeometryError::DimensionMismatch {
        box_: *bbox,
        width,
        height,
    };
    if width == 0 || height == 0 || !bbox.fits_within(width, height) {
        return Err(mismatch());
    }
    let (w, h) = (f64::from(width), f64::from(height));
    NormalizedBBox::new(
        bbox.x_min / w,
        bbox.y_min / h,
        bbox.x_max / w,
        bbox.y_max / h,
    )
    .map_err(|_| mismatch())
}

/// Orders two arbitrary corners into `(min,min)-(max,max)` and clamps the
/// result into the unit square.
pub fn canonicalize_bbox(
    first: (f64, f64),
    second: (f64, f64),
) -> Result<CanonicalBBox, GeometryError> {
    let raw = [first.0, first.1, second.0, second.1];
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFiniteInput);
    }
    let clamped = raw.iter().any(|v| !(0.0..=1.0).contains(v));
    let c = |v: f64| v.clamp(0.0, 1.0);
    let (x, x2) = (c(first.0.min(second.0)), c(first.0.max(second.0)));
    let (y, y2) = (c(first.1.min(second.1)), c(first.1.max(second.1)));
    let bbox = NormalizedBBox { x, y, x2, y2 };
    Ok(CanonicalBBox {
        bbox,
        clamped,
        degenerate: bbox.is_degenerate(),
    })
}

pub fn intersection_area(a: &NormalizedBBox, b: &NormalizedBBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x.max(b.x)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y.max(b.y)).max(0.0);
    w * h
}

/// Share of the ground-truth area covered by the generated box.
pub fn overlap_recall(gt: &NormalizedBBox, gen: &NormalizedBBox) -> Result<f64, GeometryError> {
    let gt_area = gt.area();
    if gt_area == 0.0 {
        return Err(GeometryError::DegenerateGroundTruth);
    }
    Ok((intersection_area(gt, gen) / gt_area).clamp(0.0, 1.0))
}

/// Intersection over union.
pub fn iou(gt: &NormalizedBBox, gen: &NormalizedBBox) -> Result<f64, GeometryError> {
    let (a, b) = (gt.area(), gen.area());
    if a == 0.0 && b == 0.0 {
        return Err(GeometryError::BothDegenerate);
    }
    let inter = intersection_area(gt, gen);
    // Nested boxes can round the sum below the larger area; clamping keeps
    // iou <= overlap_recall exact.
    let union = (a + b - inter).max(a).max(b);
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// True when the boxes share a region of strictly positive area. Edge or
/// corner contact does not count.
pub fn overlaps(gt: &NormalizedBBox, gen: &NormalizedBBox) -> bool {
    intersection_area(gt, gen) > 0.0
}
