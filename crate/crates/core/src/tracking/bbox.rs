use serde::{Deserialize, Serialize};

use super::TrackingError;
use crate::Scalar;

/// Axis-aligned box: top-left corner and extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T = f64> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self, TrackingError> {
        if !(w >= T::zero() && h >= T::zero()) {
            return Err(TrackingError::NegativeExtent {
                w: w.as_f64(),
                h: h.as_f64(),
            });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn center(&self) -> (T, T) {
        let half = T::of(0.5);
        (self.x + self.w * half, self.y + self.h * half)
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn diagonal(&self) -> T {
        self.w.hypot(self.h)
    }

    /// Same box with every coordinate multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            x: self.x * k,
            y: self.y * k,
            w: self.w * k,
            h: self.h * k,
        }
    }
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(T::zero());
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(T::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

/// Euclidean distance between box centers.
pub fn center_error<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// How the center error is made scale-free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Divide the center distance by the ground-truth diagonal.
    #[default]
    Diagonal,
    /// Divide each axis offset by the ground-truth extent on that axis.
    PerAxis,
}

pub fn norm_center_error<T: Scalar>(
    pred: &BoundingBox<T>,
    gt: &BoundingBox<T>,
    mode: NormMode,
) -> Result<T, TrackingError> {
    match mode {
        NormMode::Diagonal => {
            let d = gt.diagonal();
            if d <= T::zero() {
                return Err(TrackingError::DegenerateGT);
            }
            Ok(center_error(pred, gt) / d)
        }
        NormMode::PerAxis => {
            if gt.w <= T::zero() || gt.h <= T::zero() {
                return Err(TrackingError::DegenerateGT);
            }
            let (px, py) = pred.center();
            let (gx, gy) = gt.center();
            Ok(((px - gx) / gt.w).hypot((py - gy) / gt.h))
        }
    }
}
