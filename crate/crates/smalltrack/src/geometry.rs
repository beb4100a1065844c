//! Pixel-space box arithmetic underlying the metrics and attribute rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box extent must be positive, got w={w} h={h}")]
    NonPositiveExtent { w: f64, h: f64 },
    #[error("box fields must be finite")]
    NonFinite,
}

/// A point in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Axis-aligned bounding box in pixel coordinates: (left, top, width, height).
///
/// Coordinates are continuous; annotation files may carry integers but all
/// arithmetic is real-valued. Width and height are strictly positive —
/// degenerate boxes are rejected at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::NonPositiveExtent { w, h });
        }
        Ok(BBox { x, y, w, h })
    }

    /// Box centered at `c` with the given extent.
    pub fn from_center(c: Point, w: f64, h: f64) -> Result<Self, GeometryError> {
        BBox::new(c.x - w / 2.0, c.y - h / 2.0, w, h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Intersection over union with `other`. Symmetric, in [0, 1].
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }

    /// Euclidean distance between the two box centers, in pixels.
    pub fn center_error(&self, other: &BBox) -> f64 {
        self.center().distance(&other.center())
    }
}

/// Per-frame relative speed: center displacement between two neighbouring
/// frames divided by the square root of the mean area of the two boxes.
///
/// Dimensionless; invariant under uniform coordinate scaling and translation.
pub fn relative_speed(prev: &BBox, cur: &BBox) -> f64 {
    let displacement = prev.center().distance(&cur.center());
    displacement / ((prev.area() + cur.area()) / 2.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
        assert!(BBox::new(0.0, f64::INFINITY, 5.0, 5.0).is_err());
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bb(3.0, 4.0, 10.0, 12.0);
        assert_eq!(a.iou(&a), 1.0);
        let b = bb(0.0, 0.0, 10.0, 10.0);
        let c = bb(20.0, 20.0, 5.0, 5.0);
        assert_eq!(b.iou(&c), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // overlap 5x10 = 50, union 100 + 100 - 50 = 150
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(5.0, 0.0, 10.0, 10.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn center_examples() {
        assert_eq!(bb(0.0, 0.0, 10.0, 10.0).center(), Point::new(5.0, 5.0));
        assert_eq!(bb(2.0, 4.0, 6.0, 8.0).center(), Point::new(5.0, 8.0));
    }

    #[test]
    fn center_error_examples() {
        let a = bb(1.0, 2.0, 4.0, 4.0);
        assert_eq!(a.center_error(&a), 0.0);
        // centers (0,0) and (3,4): 3-4-5 triangle
        let b = bb(-1.0, -1.0, 2.0, 2.0);
        let c = bb(2.0, 3.0, 2.0, 2.0);
        assert_eq!(b.center_error(&c), 5.0);
    }

    #[test]
    fn center_error_translation_invariant() {
        let a = bb(0.0, 0.0, 4.0, 6.0);
        let b = bb(3.0, 1.0, 5.0, 2.0);
        let shift = |v: &BBox| bb(v.x + 17.5, v.y - 3.25, v.w, v.h);
        assert_eq!(a.center_error(&b), shift(&a).center_error(&shift(&b)));
    }

    #[test]
    fn relative_speed_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(relative_speed(&a, &a), 0.0);
        // two 10x10 boxes whose centers are 10 px apart: 10 / sqrt(100) = 1
        let b = bb(10.0, 0.0, 10.0, 10.0);
        assert!((relative_speed(&a, &b) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            bw in 0.1..40.0f64, bh in 0.1..40.0f64,
        ) {
            let a = bb(ax, ay, aw, ah);
            let b = bb(bx, by, bw, bh);
            let v = a.iou(&b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - b.iou(&a)).abs() < 1e-12);
        }

        #[test]
        fn center_error_metric_properties(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            w in 0.1..40.0f64, h in 0.1..40.0f64,
        ) {
            let a = bb(ax, ay, w, h);
            let b = bb(bx, by, w, h);
            let d = a.center_error(&b);
            prop_assert!(d >= 0.0);
            prop_assert!((d - b.center_error(&a)).abs() < 1e-12);
            let coincide = (ax - bx).abs() < 1e-12 && (ay - by).abs() < 1e-12;
            prop_assert_eq!(d < 1e-9, coincide || d < 1e-9);
            if a.center() == b.center() {
                prop_assert_eq!(d, 0.0);
            }
        }

        #[test]
        fn relative_speed_scale_and_translation_invariant(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            aw in 0.5..30.0f64, ah in 0.5..30.0f64,
            bw in 0.5..30.0f64, bh in 0.5..30.0f64,
            k in 0.1..20.0f64,
            tx in -100.0..100.0f64, ty in -100.0..100.0f64,
        ) {
            let a = bb(ax, ay, aw, ah);
            let b = bb(bx, by, bw, bh);
            let base = relative_speed(&a, &b);

            let scale = |v: &BBox| bb(v.x * k, v.y * k, v.w * k, v.h * k);
            let scaled = relative_speed(&scale(&a), &scale(&b));
            prop_assert!((base - scaled).abs() < 1e-9 * (1.0 + base));

            let shift = |v: &BBox| bb(v.x + tx, v.y + ty, v.w, v.h);
            let shifted = relative_speed(&shift(&a), &shift(&b));
            prop_assert!((base - shifted).abs() < 1e-9 * (1.0 + base));
        }
    }
}
