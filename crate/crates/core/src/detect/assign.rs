use alloc::vec::Vec;

use super::boxes::BoundingBox;

/// Grid layout shared by the head, target assignment and decoding.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HeadGeometry {
    pub image_size: usize,
    pub strides: [usize; 3],
    pub num_classes: usize,
}

impl HeadGeometry {
    pub fn new(image_size: usize, num_classes: usize) -> Self {
        Self { image_size, strides: crate::backbone::STRIDES, num_classes }
    }

    pub fn grid(&self, level: usize) -> usize {
        self.image_size / self.strides[level]
    }

    /// Output channels per cell: `tx, ty, tw, th, obj, class logits`.
    pub fn channels(&self) -> usize {
        5 + self.num_classes
    }

    /// Box side (pixels) predicted for `tw = 0` at `level`.
    pub fn nominal_size(&self, level: usize) -> f64 {
        4.0 * self.strides[level] as f64
    }
}

/// A ground-truth box placed on one cell of one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub bbox: BoundingBox,
}

/// Level whose nominal size `4s` is closest to the box's longer pixel side;
/// ties go to the shallower level.
pub fn assign_level(b: &BoundingBox, geom: &HeadGeometry) -> usize {
    let side = b.w.max(b.h) * geom.image_size as f64;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for level in 0..geom.strides.len() {
        let d = (side - geom.nominal_size(level)).abs();
        if d < best_d {
            best = level;
            best_d = d;
        }
    }
    best
}

/// One target per box at the cell containing its centre. Two boxes landing
/// on the same cell keep the larger one (the earlier on equal area).
pub fn assign_targets(gt: &[BoundingBox], geom: &HeadGeometry) -> Vec<Target> {
    let mut out: Vec<Target> = Vec::with_capacity(gt.len());
    for b in gt {
        let level = assign_level(b, geom);
        let s = geom.strides[level] as f64;
        let g = geom.grid(level);
        let cell = |v: f64| (libm::floor(v * geom.image_size as f64 / s).max(0.0) as usize).min(g - 1);
        let t = Target { level, row: cell(b.cy), col: cell(b.cx), bbox: *b };
        match out.iter_mut().find(|o| (o.level, o.row, o.col) == (t.level, t.row, t.col)) {
            Some(existing) => {
                if t.bbox.area() > existing.bbox.area() {
                    *existing = t;
                }
            }
            None => out.push(t),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_object_goes_to_p3() {
        let g = HeadGeometry::new(160, 2);
        let b = BoundingBox::new(0, 0.5, 0.5, 12.0 / 160.0, 12.0 / 160.0).unwrap();
        assert_eq!(assign_level(&b, &g), 0);
        let full = BoundingBox::new(1, 0.5, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(assign_level(&full, &g), 2);
    }

    #[test]
    fn collisions_keep_larger() {
        let g = HeadGeometry::new(160, 2);
        let small = BoundingBox::new(0, 0.51, 0.51, 0.05, 0.05).unwrap();
        let large = BoundingBox::new(1, 0.52, 0.52, 0.08, 0.07).unwrap();
        let t = assign_targets(&[small, large], &g);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].bbox, large);
        let t = assign_targets(&[large, small], &g);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].bbox, large);
    }

    #[test]
    fn cell_of_centre() {
        let g = HeadGeometry::new(160, 2);
        let b = BoundingBox::new(0, 0.175, 0.125, 0.1, 0.1).unwrap();
        let t = assign_targets(&[b], &g);
        assert_eq!((t[0].level, t[0].row, t[0].col), (0, 2, 3));
        let edge = BoundingBox::new(0, 1.0, 1.0, 0.1, 0.1).unwrap();
        let t = assign_targets(&[edge], &g);
        assert_eq!((t[0].row, t[0].col), (19, 19));
    }
}
