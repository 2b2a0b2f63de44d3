//! Burns detection boxes and confidence tags into an image.

use birdrone_core::detect::Detection;
use birdrone_core::tensor::{Shape, Tensor};

/// Box colours by class: drone red, bird blue; anything else green.
pub const PALETTE: [[f32; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];

pub fn class_color(class_id: usize) -> [f32; 3] {
    PALETTE[class_id.min(PALETTE.len() - 1)]
}

/// Inclusive pixel rectangle `(x0, y0, x1, y1)` covered by a detection on a
/// `w x h` image.
pub fn box_pixels(d: &Detection, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (nx0, ny0, nx1, ny1) = d.bbox.corners();
    let px = |v: f64, n: usize| (v * n as f64).round().clamp(0.0, n as f64) as usize;
    let x0 = px(nx0, w).min(w - 1);
    let y0 = px(ny0, h).min(h - 1);
    let x1 = px(nx1, w).saturating_sub(1).clamp(x0, w - 1);
    let y1 = px(ny1, h).saturating_sub(1).clamp(y0, h - 1);
    (x0, y0, x1, y1)
}

// 3x5 glyphs, one row per entry, bit 2 = left column.
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;

fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        _ => [0; GLYPH_H],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        if x < self.w && y < self.h {
            let plane = self.w * self.h;
            for (c, v) in rgb.iter().enumerate() {
                self.data[c * plane + y * self.w + x] = *v;
            }
        }
    }

    fn outline(&mut self, (x0, y0, x1, y1): (usize, usize, usize, usize), rgb: [f32; 3]) {
        for x in x0..=x1 {
            self.put(x, y0, rgb);
            self.put(x, y1, rgb);
        }
        for y in y0..=y1 {
            self.put(x0, y, rgb);
            self.put(x1, y, rgb);
        }
    }

    /// Filled strip in `rgb` with white text, its lower-left corner at
    /// `(x, bottom)`.
    fn tag(&mut self, x: usize, bottom: usize, text: &str, rgb: [f32; 3]) {
        let tw = text.chars().count() * (GLYPH_W + 1) + 1;
        let th = GLYPH_H + 2;
        let top = (bottom + 1).saturating_sub(th);
        for y in top..top + th {
            for xx in x..x + tw {
                self.put(xx, y, rgb);
            }
        }
        for (i, ch) in text.chars().enumerate() {
            let gx = x + 1 + i * (GLYPH_W + 1);
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        self.put(gx + col, top + 1 + row, [1.0; 3]);
                    }
                }
            }
        }
    }
}

/// Returns `image` with a one-pixel outline per detection in its class
/// colour and a confidence tag above it (inside the box when there is no
/// room). Grayscale input is promoted to RGB when anything is drawn; with no
/// detections the input is returned unchanged.
pub fn render(image: &Tensor<f32>, dets: &[Detection]) -> Tensor<f32> {
    let s = image.shape();
    if dets.is_empty() || s.h == 0 || s.w == 0 {
        return image.clone();
    }
    let plane = s.h * s.w;
    let src = &image.data()[..s.c * plane];
    let mut data = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        let from = if s.c >= 3 { c } else { 0 };
        data.extend_from_slice(&src[from * plane..(from + 1) * plane]);
    }
    let mut canvas = Canvas { w: s.w, h: s.h, data };
    for d in dets {
        let rgb = class_color(d.bbox.class_id);
        let rect = box_pixels(d, s.w, s.h);
        canvas.outline(rect, rgb);
        let text = format!("{:.2}", d.confidence.clamp(0.0, 1.0));
        let bottom = if rect.1 > GLYPH_H + 2 { rect.1 - 1 } else { rect.1 + GLYPH_H + 2 };
        canvas.tag(rect.0, bottom, &text, rgb);
    }
    Tensor::new(Shape::new(1, 3, s.h, s.w), canvas.data).expect("canvas matches shape")
}
