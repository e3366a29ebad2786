//! Axis-aligned boxes in pixel coordinates: (x1, y1) top-left inclusive,
//! (x2, y2) exclusive, so area = (x2-x1)*(y2-y1).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxF {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxF {
        BoxF { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn clamped(&self, w: f64, h: f64) -> BoxF {
        BoxF {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }

    pub fn intersection_area(&self, other: &BoxF) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        iw * ih
    }

    /// Largest absolute corner-coordinate difference.
    pub fn max_corner_diff(&self, other: &BoxF) -> f64 {
        (self.x1 - other.x1)
            .abs()
            .max((self.y1 - other.y1).abs())
            .max((self.x2 - other.x2).abs())
            .max((self.y2 - other.y2).abs())
    }
}

/// Intersection over union of two boxes; 0 when either is degenerate.
pub fn iou(a: &BoxF, b: &BoxF) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_of_box_with_itself_is_one() {
        let b = BoxF::new(2.0, 3.0, 10.0, 9.0);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = BoxF::new(0.0, 0.0, 2.0, 2.0);
        let b = BoxF::new(5.0, 5.0, 8.0, 8.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_is_symmetric() {
        let a = BoxF::new(0.0, 0.0, 4.0, 4.0);
        let b = BoxF::new(2.0, 2.0, 6.0, 6.0);
        assert_eq!(iou(&a, &b), iou(&b, &a));
        // 2x2 overlap, union 16+16-4
        assert!((iou(&a, &b) - 4.0 / 28.0).abs() < 1e-15);
    }
}
