use alloc::vec;
use alloc::vec::Vec;

use crate::detect::BoundingBox;

/// Object size classes by pixel extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBin {
    ExtremelySmall,
    Small,
    Medium,
    Large,
}

impl SizeBin {
    pub const ALL: [SizeBin; 4] = [Self::ExtremelySmall, Self::Small, Self::Medium, Self::Large];

    pub fn name(self) -> &'static str {
        match self {
            Self::ExtremelySmall => "extremely_small",
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Pixel side rounded to 1e-6 so exact edges survive normalization.
fn pixels(v: f64, image_size: usize) -> f64 {
    libm::round(v * image_size as f64 * 1e6) / 1e6
}

/// Both sides under 20 px is extremely small; either side over 96 is large;
/// the longer side in `(32, 96]` is medium; anything else (including exactly
/// 32x32) is small.
pub fn size_bin(b: &BoundingBox, image_size: usize) -> SizeBin {
    let (w, h) = (pixels(b.w, image_size), pixels(b.h, image_size));
    if w < 20.0 && h < 20.0 {
        SizeBin::ExtremelySmall
    } else if w > 96.0 || h > 96.0 {
        SizeBin::Large
    } else if w.max(h) > 32.0 {
        SizeBin::Medium
    } else {
        SizeBin::Small
    }
}

/// Object counts per class and per size bin.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub objects: usize,
    pub per_class: Vec<usize>,
    pub per_bin: [usize; 4],
    pub smallest: Vec<Option<(usize, usize)>>,
}

/// Census over label lists; `smallest` holds the per-class box with the
/// least pixel area, as rounded `(w, h)`.
pub fn dataset_stats<'a>(
    labels: impl IntoIterator<Item = &'a [BoundingBox]>,
    image_size: usize,
    num_classes: usize,
) -> DatasetStats {
    let mut s = DatasetStats {
        images: 0,
        objects: 0,
        per_class: vec![0; num_classes],
        per_bin: [0; 4],
        smallest: vec![None; num_classes],
    };
    for boxes in labels {
        s.images += 1;
        for b in boxes {
            s.objects += 1;
            if b.class_id < num_classes {
                s.per_class[b.class_id] += 1;
                let w = libm::round(b.w * image_size as f64) as usize;
                let h = libm::round(b.h * image_size as f64) as usize;
                let slot = &mut s.smallest[b.class_id];
                if slot.map_or(true, |(sw, sh)| w * h < sw * sh) {
                    *slot = Some((w, h));
                }
            }
            s.per_bin[size_bin(b, image_size).index()] += 1;
        }
    }
    s
}
