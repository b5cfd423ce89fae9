//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! Coordinates are half-open: a box covers `[x_min, x_max) x [y_min, y_max)` and
//! its area is `(x_max - x_min) * (y_max - y_min)` with no `+1` correction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of redraws when a perturbed box degenerates after clipping.
pub const MAX_PERTURB_RETRIES: usize = 10;

/// An axis-aligned rectangle with strictly positive area and finite coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(Error::CoordinateOrder(format!(
                "non-finite coordinate in ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::CoordinateOrder(format!(
                "expected x_min < x_max and y_min < y_max, got ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box from its top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    #[inline]
    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    #[inline]
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    #[inline]
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    #[inline]
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Multiply every coordinate by per-axis factors.
    pub fn scaled(&self, fx: f64, fy: f64) -> Result<Self> {
        Self::new(
            self.x_min * fx,
            self.y_min * fy,
            self.x_max * fx,
            self.y_max * fy,
        )
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when the box lies within `[0, width] x [0, height]`.
    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Largest IoU between `b` and any box in `set` (0 for an empty set).
pub fn max_iou(b: &BBox, set: &[BBox]) -> f64 {
    set.iter().map(|g| iou(b, g)).fold(0.0, f64::max)
}

/// Clamp a box into the image rectangle `[0, width] x [0, height]`.
pub fn clip_to_image(b: &BBox, width: f64, height: f64) -> Result<BBox> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Config(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    let x0 = b.x_min.clamp(0.0, width);
    let y0 = b.y_min.clamp(0.0, height);
    let x1 = b.x_max.clamp(0.0, width);
    let y1 = b.y_max.clamp(0.0, height);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::DegenerateBox(format!(
            "({}, {}, {}, {}) has no area inside {width}x{height}",
            b.x_min, b.y_min, b.x_max, b.y_max
        )));
    }
    BBox::new(x0, y0, x1, y1)
}

/// Corner-noise level for ground-truth perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub gamma: f64,
    pub seed: u64,
}

impl PerturbConfig {
    pub fn new(gamma: f64, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 0.5), got {gamma}")));
        }
        Ok(Self { gamma, seed })
    }
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { gamma: 0.2, seed: 0 }
    }
}

/// Jitter each corner coordinate of `gt` independently and uniformly by up to
/// `gamma` times the box width (x) or height (y), then clip to the image.
///
/// A draw that collapses to zero area after clipping is redrawn, at most
/// [`MAX_PERTURB_RETRIES`] times.
pub fn perturb_gt<R: Rng + ?Sized>(
    gt: &BBox,
    gamma: f64,
    width: f64,
    height: f64,
    rng: &mut R,
) -> Result<BBox> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 0.5), got {gamma}")));
    }
    if gamma == 0.0 {
        return clip_to_image(gt, width, height);
    }
    let dx = gamma * gt.width();
    let dy = gamma * gt.height();
    let mut last_err = None;
    for _ in 0..=MAX_PERTURB_RETRIES {
        let x0 = rng.random_range(gt.x_min - dx..=gt.x_min + dx);
        let y0 = rng.random_range(gt.y_min - dy..=gt.y_min + dy);
        let x1 = rng.random_range(gt.x_max - dx..=gt.x_max + dx);
        let y1 = rng.random_range(gt.y_max - dy..=gt.y_max + dy);
        let raw = BBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        };
        match clip_to_image(&raw, width, height) {
            Ok(b) => return Ok(b),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::DegenerateBox("perturbation failed".into())))
}
