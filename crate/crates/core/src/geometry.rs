//! Integer pixel boxes and overlap measures.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Closed integer pixel rectangle: columns `x..x+w`, rows `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    /// Panics on a zero-sized box.
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1, "box must have positive area");
        BoundingBox { x, y, w, h }
    }

    pub fn try_new(x: u32, y: u32, w: u32, h: u32) -> Option<Self> {
        (w >= 1 && h >= 1).then_some(BoundingBox { x, y, w, h })
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    #[inline]
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    #[inline]
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn check_inside(&self, width: u32, height: u32) -> Result<()> {
        if self.fits_in(width, height) {
            Ok(())
        } else {
            Err(Error::BoxOutOfFrame {
                bbox: self.to_string(),
                width,
                height,
            })
        }
    }

    /// Number of pixels shared with `other`.
    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }

    pub fn union_area(&self, other: &BoundingBox) -> u64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// Raster ordering: top-to-bottom, then left-to-right, then size.
    /// This is the "scan order" used for every deterministic tie-break.
    pub fn scan_cmp(&self, other: &BoundingBox) -> Ordering {
        (self.y, self.x, self.h, self.w).cmp(&(other.y, other.x, other.h, other.w))
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Exact intersection-over-union in pixel counts.
pub fn iou_exact(a: &BoundingBox, b: &BoundingBox) -> Ratio<u64> {
    Ratio::new(a.intersection_area(b), a.union_area(b))
}

/// Intersection-over-union as a real ratio in `[0, 1]`.
pub fn iou<T: Scalar>(a: &BoundingBox, b: &BoundingBox) -> T {
    let inter = a.intersection_area(b) as f64;
    let union = a.union_area(b) as f64;
    T::of(inter / union)
}
