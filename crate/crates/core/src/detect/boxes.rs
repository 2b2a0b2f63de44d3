use crate::error::{Error, Result};

pub const DRONE: usize = 0;
pub const BIRD: usize = 1;
pub const CLASS_NAMES: [&str; 2] = ["drone", "bird"];

/// Class-labelled box in normalized image coordinates (`[0, 1]`).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Validated constructor: centre inside the unit square, `0 < w, h <= 1`,
    /// and a non-empty overlap with the image.
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { class_id, cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0;
        if !ok {
            return Err(Error::Config(alloc::format!("invalid box {:?}", self)));
        }
        Ok(())
    }

    /// From pixel corners `[x0, x1) x [y0, y1)` on a `size x size` image.
    pub fn from_pixel_corners(class_id: usize, x0: f64, y0: f64, x1: f64, y1: f64, size: f64) -> Self {
        Self {
            class_id,
            cx: (x0 + x1) / 2.0 / size,
            cy: (y0 + y1) / 2.0 / size,
            w: (x1 - x0) / size,
            h: (y1 - y0) / size,
        }
    }

    /// `(x0, y0, x1, y1)` normalized.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Pixel width and height on a square image of side `image_size`.
    pub fn pixel_size(&self, image_size: usize) -> (f64, f64) {
        (self.w * image_size as f64, self.h * image_size as f64)
    }
}

/// A predicted box with its confidence (objectness x class probability).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Intersection over union; 0 for disjoint or degenerate pairs.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
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
    fn iou_examples() {
        let a = BoundingBox::new(0, 0.5, 0.5, 0.2, 0.3).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        let b = BoundingBox::new(0, 0.1, 0.1, 0.1, 0.1).unwrap();
        assert_eq!(iou(&a, &b), 0.0);
        let l = BoundingBox::new(0, 0.25, 0.5, 0.5, 1.0).unwrap();
        let r = BoundingBox::new(0, 0.5, 0.5, 0.5, 1.0).unwrap();
        assert!((iou(&l, &r) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(BoundingBox::new(0, 0.5, 0.5, 0.2, 0.1).is_ok());
        assert!(BoundingBox::new(0, 1.2, 0.5, 0.2, 0.1).is_err());
        assert!(BoundingBox::new(0, 0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BoundingBox::new(0, 0.5, 0.5, 1.1, 0.1).is_err());
        assert!(BoundingBox::new(1, 0.0, 1.0, 0.3, 0.3).is_ok());
    }
}
