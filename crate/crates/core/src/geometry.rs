//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! x grows to the right, y grows down, the origin is the top-left image
//! corner. Pixel `(c, r)` covers the unit square `[c, c+1) x [r, r+1)` and
//! its center sits at `(c + 0.5, r + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [f64; 4]) -> Self {
        BBox { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    /// Builds a box, rejecting inverted or non-finite corners.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x0, y0, x1, y1 })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x0 <= self.x1
            && self.y0 <= self.y1
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Clips the box to `[0, width] x [0, height]`. A box entirely outside
    /// collapses onto the nearest image edge with zero area.
    pub fn clip(&self, width: u32, height: u32) -> BBox {
        let (w, h) = (f64::from(width), f64::from(height));
        let x0 = self.x0.clamp(0.0, w);
        let y0 = self.y0.clamp(0.0, h);
        BBox {
            x0,
            y0,
            x1: self.x1.clamp(x0, w),
            y1: self.y1.clamp(y0, h),
        }
    }

    /// Grows the box by `margin` on every side.
    pub fn dilate(&self, margin: f64) -> BBox {
        BBox {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    /// Rounds every corner to the nearest integer; used to bucket prompt
    /// boxes.
    pub fn rounded(&self) -> [i64; 4] {
        [self.x0, self.y0, self.x1, self.y1].map(|v| v.round() as i64)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Area intersection-over-union. Zero-area boxes score 0.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// True when the pixel center `(c + 0.5, r + 0.5)` lies inside the
    /// half-open box `[x0, x1) x [y0, y1)`.
    pub fn covers_pixel(&self, c: u32, r: u32) -> bool {
        let (px, py) = (f64::from(c) + 0.5, f64::from(r) + 0.5);
        px >= self.x0 && px < self.x1 && py >= self.y0 && py < self.y1
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// Free-function form of [`BBox::iou`].
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}
