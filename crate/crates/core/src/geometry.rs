//! Axis-aligned integer boxes.
//!
//! Boxes are stored as a left-top corner plus width and height, 0-based, with
//! an exclusive right/bottom edge: `xmax() == xmin + width`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: u32,
    pub ymin: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    /// Panics when `width` or `height` is zero.
    pub fn new(xmin: u32, ymin: u32, width: u32, height: u32) -> Self {
        Self::try_new(xmin, ymin, width, height).expect("box width and height must be >= 1")
    }

    pub fn try_new(xmin: u32, ymin: u32, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "degenerate box ({xmin},{ymin},{width},{height})"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            width,
            height,
        })
    }

    /// Box spanning the half-open ranges `[x0, x1) x [y0, y1)`.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidInput(format!(
                "empty corner range ({x0},{y0})-({x1},{y1})"
            )));
        }
        Self::try_new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn xmax(&self) -> u32 {
        self.xmin + self.width
    }

    pub fn ymax(&self) -> u32 {
        self.ymin + self.height
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    /// `max(W/H, H/W)`, always >= 1.
    pub fn elongation(&self) -> f64 {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        (w / h).max(h / w)
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        u64::from(self.xmin) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.ymin) + u64::from(self.height) <= u64::from(height)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin
            && self.ymin <= other.ymin
            && self.xmax() >= other.xmax()
            && self.ymax() >= other.ymax()
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.xmin && x < self.xmax() && y >= self.ymin && y < self.ymax()
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.xmin.max(other.xmin);
        let y0 = self.ymin.max(other.ymin);
        let x1 = self.xmax().min(other.xmax());
        let y1 = self.ymax().min(other.ymax());
        BBox::from_corners(x0, y0, x1, y1).ok()
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    /// Smallest box containing both `self` and `other`.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            xmin: self.xmin.min(other.xmin),
            ymin: self.ymin.min(other.ymin),
            width: self.xmax().max(other.xmax()) - self.xmin.min(other.xmin),
            height: self.ymax().max(other.ymax()) - self.ymin.min(other.ymin),
        }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    a.union(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pixel-counting IoU, independent of the interval arithmetic above.
    fn raster_iou(a: &BBox, b: &BBox) -> f64 {
        let x1 = a.xmax().max(b.xmax());
        let y1 = a.ymax().max(b.ymax());
        let (mut inter, mut uni) = (0u64, 0u64);
        for y in 0..y1 {
            for x in 0..x1 {
                let (ia, ib) = (a.contains_point(x, y), b.contains_point(x, y));
                inter += u64::from(ia && ib);
                uni += u64::from(ia || ib);
            }
        }
        inter as f64 / uni as f64
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let b = BBox::new(3, 4, 7, 9);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&BBox::new(0, 0, 10, 10), &BBox::new(20, 20, 5, 5)), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        let a = BBox::new(0, 0, 10, 10);
        let b = BBox::new(5, 0, 10, 10);
        let expected = raster_iou(&a, &b);
        assert!((expected - 50.0 / 150.0).abs() < 1e-12);
        assert!((iou(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&BBox::new(0, 0, 10, 10), &BBox::new(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn union_examples() {
        let b = BBox::new(2, 2, 5, 5);
        assert_eq!(union_box(&b, &b), b);
        assert_eq!(
            union_box(&BBox::new(0, 0, 10, 10), &BBox::new(5, 0, 10, 10)),
            BBox::new(0, 0, 15, 10)
        );
        assert_eq!(
            union_box(&BBox::new(0, 0, 2, 2), &BBox::new(8, 8, 2, 2)),
            BBox::new(0, 0, 10, 10)
        );
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::try_new(0, 0, 0, 4).is_err());
        assert!(BBox::from_corners(5, 5, 5, 9).is_err());
    }

    #[test]
    fn elongation_is_symmetric() {
        assert_eq!(BBox::new(0, 0, 100, 10).elongation(), 10.0);
        assert_eq!(BBox::new(0, 0, 10, 100).elongation(), 10.0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..40, 0u32..40, 1u32..30, 1u32..30).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, a == b);
        }

        #[test]
        fn iou_matches_rasterization(a in arb_box(), b in arb_box()) {
            prop_assert!((iou(&a, &b) - raster_iou(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn union_contains_both_and_is_minimal(a in arb_box(), b in arb_box(), c in arb_box()) {
            let u = union_box(&a, &b);
            prop_assert!(u.contains(&a) && u.contains(&b));
            if c.contains(&a) && c.contains(&b) {
                prop_assert!(c.contains(&u));
            }
        }
    }
}
