//! Procedural sky scenes with drone (cross + rotors) and bird (two-arc V)
//! silhouettes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{BoundingBox, BIRD, DRONE};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const SUPERSAMPLE: usize = 4;
const PLACEMENT_RETRIES: usize = 100;
/// Scale ceiling used when an object is drawn from the small-object bias.
const SMALL_SCALE_CAP: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    /// 1 (grayscale) or 3.
    pub channels: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that an object is a bird.
    pub bird_probability: f64,
    /// Object extent in pixels.
    pub min_scale: f64,
    pub max_scale: f64,
    /// Probability of drawing the scale from `[min_scale, 20]` instead of
    /// the full log-uniform range.
    pub small_bias: f64,
    /// Expected clutter shapes per 100x100 px.
    pub clutter_density: f64,
    pub occlusion_probability: f64,
    pub blur_probability: f64,
    pub boundary_probability: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: 160,
            channels: 1,
            min_objects: 1,
            max_objects: 3,
            bird_probability: 0.5,
            min_scale: 6.0,
            max_scale: 128.0,
            small_bias: 0.0,
            clutter_density: 1.0,
            occlusion_probability: 0.1,
            blur_probability: 0.1,
            boundary_probability: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.min_objects > self.max_objects {
            return bad(format!("object range {}..{} is empty", self.min_objects, self.max_objects));
        }
        if !(self.min_scale >= 5.0) || !(self.max_scale >= self.min_scale) {
            return bad(format!("scale range [{}, {}] must start at 5 px or more", self.min_scale, self.max_scale));
        }
        if self.max_scale > self.image_size as f64 {
            return bad(format!("max_scale {} exceeds the image size", self.max_scale));
        }
        let probs = [
            ("bird_probability", self.bird_probability),
            ("small_bias", self.small_bias),
            ("occlusion_probability", self.occlusion_probability),
            ("blur_probability", self.blur_probability),
            ("boundary_probability", self.boundary_probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.clutter_density >= 0.0) {
            return bad("clutter_density must be non-negative".into());
        }
        Ok(())
    }
}

/// One generated image with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(1, C, H, W)` with values on the 1/255 lattice in `[0, 1]`.
    pub image: Tensor<f32>,
    pub labels: Vec<BoundingBox>,
}

/// Coverage of one object over its pixel window, after blur.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    pub class_id: usize,
    /// Top-left pixel of the window; may be negative.
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
    pub alpha: Vec<f64>,
}

impl ObjectMask {
    pub fn at(&self, x: i64, y: i64) -> f64 {
        let (dx, dy) = (x - self.x0, y - self.y0);
        if dx < 0 || dy < 0 || dx as usize >= self.w || dy as usize >= self.h {
            0.0
        } else {
            self.alpha[dy as usize * self.w + dx as usize]
        }
    }

    /// Pixel extent `(x0, y0, x1, y1)` of nonzero coverage, clipped to the
    /// image when `clip` is given.
    pub fn extent(&self, clip: Option<usize>) -> Option<(i64, i64, i64, i64)> {
        let mut e: Option<(i64, i64, i64, i64)> = None;
        for j in 0..self.h {
            for i in 0..self.w {
                if self.alpha[j * self.w + i] <= 0.0 {
                    continue;
                }
                let (x, y) = (self.x0 + i as i64, self.y0 + j as i64);
                if let Some(s) = clip {
                    if x < 0 || y < 0 || x >= s as i64 || y >= s as i64 {
                        continue;
                    }
                }
                e = Some(match e {
                    None => (x, y, x + 1, y + 1),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                });
            }
        }
        e
    }
}

/// A sample plus the per-object coverage it was labelled from.
#[derive(Clone, Debug)]
pub struct Scene {
    pub sample: Sample,
    pub masks: Vec<ObjectMask>,
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}

/// Silhouette membership in a unit frame centred on the object.
#[derive(Clone, Debug)]
enum Silhouette {
    Drone { bar: f64 },
    Bird { wing: f64, polyline: Vec<(f64, f64)> },
}

impl Silhouette {
    fn drone(scale: f64) -> Self {
        Self::Drone { bar: (0.12f64).max(1.0 / scale) }
    }

    fn bird(scale: f64, droop: f64) -> Self {
        // each wing is a quadratic arc from the vertex to a tip
        let vertex = (0.0, 0.12);
        let mut polyline = Vec::new();
        for side in [-1.0, 1.0] {
            let ctrl = (side * 0.2, -0.2 + droop);
            let tip = (side * 0.42, -0.08 - droop * 0.5);
            for k in 0..=12 {
                let t = k as f64 / 12.0;
                let u = 1.0 - t;
                polyline.push((
                    u * u * vertex.0 + 2.0 * u * t * ctrl.0 + t * t * tip.0,
                    u * u * vertex.1 + 2.0 * u * t * ctrl.1 + t * t * tip.1,
                ));
            }
        }
        Self::Bird { wing: (0.09f64).max(1.1 / scale), polyline }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Self::Drone { bar } => {
                let h = bar / 2.0;
                let arms = (v.abs() < h && u.abs() < 0.34) || (u.abs() < h && v.abs() < 0.34);
                let body = u * u + v * v < 0.1 * 0.1;
                let rotor = [(0.34, 0.0), (-0.34, 0.0), (0.0, 0.34), (0.0, -0.34)]
                    .iter()
                    .any(|(cx, cy)| (u - cx) * (u - cx) + (v - cy) * (v - cy) < 0.13 * 0.13);
                arms || body || rotor
            }
            Self::Bird { wing, polyline } => {
                let r2 = (wing / 2.0) * (wing / 2.0);
                let half = polyline.len() / 2;
                let near = |pts: &[(f64, f64)]| pts.windows(2).any(|s| seg_dist2((u, v), s[0], s[1]) < r2);
                near(&polyline[..half]) || near(&polyline[half..]) || u * u + (v - 0.1) * (v - 0.1) < 0.06 * 0.06
            }
        }
    }
}

/// Rasterises `shape` at pixel-space centre `(cx, cy)` with extent `scale`
/// and rotation `angle`, optionally smeared along a motion direction.
fn rasterise(shape: &Silhouette, class_id: usize, cx: f64, cy: f64, scale: f64, angle: f64, blur: Option<(f64, usize)>) -> ObjectMask {
    let reach = scale * 0.55 + 1.0;
    let pad = blur.map_or(0, |(_, len)| len) as i64;
    let x0 = libm::floor(cx - reach) as i64 - pad;
    let y0 = libm::floor(cy - reach) as i64 - pad;
    let x1 = libm::ceil(cx + reach) as i64 + pad;
    let y1 = libm::ceil(cy + reach) as i64 + pad;
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let (sin, cos) = libm::sincos(angle);
    let mut alpha = vec![0.0; w * h];
    let n2 = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for j in 0..h {
        for i in 0..w {
            let mut hits = 0;
            for sj in 0..SUPERSAMPLE {
                for si in 0..SUPERSAMPLE {
                    let px = (x0 + i as i64) as f64 + (si as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
                    let py = (y0 + j as i64) as f64 + (sj as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
                    let u = (cos * px + sin * py) / scale;
                    let v = (-sin * px + cos * py) / scale;
                    if shape.contains(u, v) {
                        hits += 1;
                    }
                }
            }
            alpha[j * w + i] = hits as f64 / n2;
        }
    }
    if let Some((dir, len)) = blur {
        let (dy, dx) = libm::sincos(dir);
        let src = alpha.clone();
        for j in 0..h as i64 {
            for i in 0..w as i64 {
                let mut acc = 0.0;
                for k in 0..len {
                    let si = i - libm::round(dx * k as f64) as i64;
                    let sj = j - libm::round(dy * k as f64) as i64;
                    if si >= 0 && sj >= 0 && (si as usize) < w && (sj as usize) < h {
                        acc += src[sj as usize * w + si as usize];
                    }
                }
                alpha[j as usize * w + i as usize] = acc / len as f64;
            }
        }
    }
    ObjectMask { class_id, x0, y0, w, h, alpha }
}

/// Smooth background: bilinear upsampling of a coarse random grid plus a
/// vertical gradient.
fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let g = 5;
    let coarse: Vec<f64> = (0..g * g).map(|_| rng.gen_range(-0.12..0.12)).collect();
    let base = rng.gen_range(0.45..0.8);
    let tilt = rng.gen_range(-0.15..0.15);
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let gy = y as f64 / size as f64 * (g - 1) as f64;
            let gx = x as f64 / size as f64 * (g - 1) as f64;
            let (iy, ix) = (gy as usize, gx as usize);
            let (fy, fx) = (gy - iy as f64, gx - ix as f64);
            let at = |a: usize, b: usize| coarse[a.min(g - 1) * g + b.min(g - 1)];
            let v = at(iy, ix) * (1.0 - fy) * (1.0 - fx)
                + at(iy, ix + 1) * (1.0 - fy) * fx
                + at(iy + 1, ix) * fy * (1.0 - fx)
                + at(iy + 1, ix + 1) * fy * fx;
            out[y * size + x] = base + v + tilt * (y as f64 / size as f64 - 0.5);
        }
    }
    out
}

/// Soft cloud blobs and thin wire/branch lines.
fn clutter(rng: &mut ChaCha8Rng, img: &mut [f64], size: usize, density: f64) {
    let expected = density * (size * size) as f64 / 10_000.0;
    let count = libm::floor(expected + rng.gen::<f64>()) as usize;
    for _ in 0..count {
        if rng.gen_bool(0.6) {
            let (cx, cy) = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64));
            let (rx, ry) = (rng.gen_range(6.0..30.0), rng.gen_range(4.0..16.0));
            let shift = rng.gen_range(0.05..0.18);
            for y in 0..size {
                for x in 0..size {
                    let (ex, ey) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                    let d = ex * ex + ey * ey;
                    if d < 1.0 {
                        img[y * size + x] += shift * (1.0 - d);
                    }
                }
            }
        } else {
            let a = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64));
            let b = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64));
            let shade = rng.gen_range(0.2..0.45);
            for y in 0..size {
                for x in 0..size {
                    if seg_dist2((x as f64 + 0.5, y as f64 + 0.5), a, b) < 0.5 * 0.5 {
                        img[y * size + x] = img[y * size + x].min(shade + 0.1) * 0.5 + shade * 0.5;
                    }
                }
            }
        }
    }
}

/// Largest fraction of either box covered by their intersection.
fn overlap(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0) as f64;
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0) as f64;
    let area = |r: (i64, i64, i64, i64)| ((r.2 - r.0) * (r.3 - r.1)) as f64;
    iw * ih / area(a).min(area(b))
}

fn area(r: (i64, i64, i64, i64)) -> i64 {
    (r.2 - r.0) * (r.3 - r.1)
}

/// Renders one scene; deterministic in `(spec, seed)`.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.image_size;
    let sf = size as f64;
    let mut img = background(&mut rng, size);
    clutter(&mut rng, &mut img, size, spec.clutter_density);
    let bg = img.clone();

    let count = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut masks: Vec<ObjectMask> = Vec::with_capacity(count);
    let mut placed: Vec<(i64, i64, i64, i64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = if rng.gen_bool(spec.bird_probability) { BIRD } else { DRONE };
        let small = rng.gen_bool(spec.small_bias);
        let mut accepted = None;
        for attempt in 0..PLACEMENT_RETRIES {
            let scale = if small {
                rng.gen_range(spec.min_scale..=spec.max_scale.min(SMALL_SCALE_CAP).max(spec.min_scale))
            } else {
                libm::exp(rng.gen_range(libm::log(spec.min_scale)..=libm::log(spec.max_scale)))
            };
            let angle = rng.gen_range(-PI..PI);
            let blur = if rng.gen_bool(spec.blur_probability) {
                Some((rng.gen_range(-PI..PI), rng.gen_range(2..=4usize)))
            } else {
                None
            };
            let (cx, cy) = if rng.gen_bool(spec.boundary_probability) {
                let along = rng.gen_range(0.0..sf);
                let depth = rng.gen_range(-0.25 * scale..0.25 * scale);
                match rng.gen_range(0..4) {
                    0 => (along, depth),
                    1 => (along, sf - depth),
                    2 => (depth, along),
                    _ => (sf - depth, along),
                }
            } else {
                let m = (scale / 2.0).min(sf / 2.0);
                (rng.gen_range(m..=sf - m), rng.gen_range(m..=sf - m))
            };
            let shape = if class_id == DRONE {
                Silhouette::drone(scale)
            } else {
                Silhouette::bird(scale, rng.gen_range(0.0..0.15))
            };
            let mask = rasterise(&shape, class_id, cx, cy, scale, angle, blur);
            let (Some(full), Some(vis)) = (mask.extent(None), mask.extent(Some(size))) else {
                continue;
            };
            if (area(vis) as f64) < 0.25 * area(full) as f64 {
                continue;
            }
            // prefer well separated objects; tolerate heavy overlap late
            let limit = if attempt < PLACEMENT_RETRIES / 2 { 0.1 } else { 0.9 };
            if placed.iter().any(|p| overlap(*p, vis) > limit) {
                continue;
            }
            accepted = Some((mask, vis));
            break;
        }
        let Some((mask, vis)) = accepted else {
            return Err(Error::Generation(format!(
                "could not place object {} of {count} after {PLACEMENT_RETRIES} attempts",
                masks.len() + 1
            )));
        };
        placed.push(vis);
        masks.push(mask);
    }

    // composite objects, then occluders
    for mask in &masks {
        let dark = rng.gen_bool(0.8);
        let contrast = rng.gen_range(0.3..0.55);
        for j in 0..mask.h {
            for i in 0..mask.w {
                let (x, y) = (mask.x0 + i as i64, mask.y0 + j as i64);
                let a = mask.alpha[j * mask.w + i];
                if a <= 0.0 || x < 0 || y < 0 || x >= size as i64 || y >= size as i64 {
                    continue;
                }
                let p = &mut img[y as usize * size + x as usize];
                let target = if dark { (*p - contrast).max(0.02) } else { (*p + contrast).min(0.98) };
                *p += a * (target - *p);
            }
        }
    }
    for vis in &placed {
        if !rng.gen_bool(spec.occlusion_probability) {
            continue;
        }
        let (w, h) = ((vis.2 - vis.0) as f64, (vis.3 - vis.1) as f64);
        let corner_x = if rng.gen_bool(0.5) { vis.0 as f64 } else { vis.2 as f64 };
        let corner_y = if rng.gen_bool(0.5) { vis.1 as f64 } else { vis.3 as f64 };
        let r = 0.5 * w.min(h);
        let lift = rng.gen_range(0.0..0.1);
        for y in vis.1..vis.3 {
            for x in vis.0..vis.2 {
                let (ex, ey) = (x as f64 + 0.5 - corner_x, y as f64 + 0.5 - corner_y);
                let d2 = ex * ex + ey * ey;
                if d2 < r * r {
                    let k = y as usize * size + x as usize;
                    img[k] = bg[k] + lift;
                }
            }
        }
    }

    let tints: [f64; 3] = if spec.channels == 3 {
        [rng.gen_range(0.85..0.95), rng.gen_range(0.92..1.0), 1.0]
    } else {
        [1.0; 3]
    };
    let mut data = Vec::with_capacity(spec.channels * size * size);
    for tint in tints.iter().take(spec.channels) {
        for v in &img {
            let q = libm::round((v * tint).clamp(0.0, 1.0) * 255.0);
            data.push((q / 255.0) as f32);
        }
    }
    let image = Tensor::new(Shape::new(1, spec.channels, size, size), data)?;
    let labels = placed
        .iter()
        .zip(&masks)
        .map(|(v, m)| BoundingBox::from_pixel_corners(m.class_id, v.0 as f64, v.1 as f64, v.2 as f64, v.3 as f64, sf))
        .collect();
    Ok(Scene { sample: Sample { id: format!("{seed}"), image, labels }, masks })
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Sample> {
    render_scene(spec, seed).map(|s| s.sample)
}

/// `count` scenes with seeds `spec.seed + i` and ids `000000`, `000001`, ...
pub fn generate_dataset(spec: &SceneSpec, count: usize) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let mut s = generate_scene(spec, spec.seed.wrapping_add(i as u64))?;
            s.id = format!("{i:06}");
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{size_bin, SizeBin};

    #[test]
    fn deterministic() {
        let spec = SceneSpec { occlusion_probability: 0.5, blur_probability: 0.5, ..SceneSpec::default() };
        let a = generate_scene(&spec, 11).unwrap();
        let b = generate_scene(&spec, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec, 12).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn exact_count_and_tiny_scales() {
        let spec = SceneSpec { min_objects: 3, max_objects: 3, min_scale: 6.0, max_scale: 7.0, ..SceneSpec::default() };
        for seed in 0..20 {
            let s = generate_scene(&spec, seed).unwrap();
            assert_eq!(s.labels.len(), 3);
            for b in &s.labels {
                assert_eq!(size_bin(b, 160), SizeBin::ExtremelySmall);
            }
        }
    }

    #[test]
    fn labels_are_tight() {
        let spec = SceneSpec { boundary_probability: 0.4, blur_probability: 0.3, ..SceneSpec::default() };
        for seed in 0..10 {
            let scene = render_scene(&spec, seed).unwrap();
            for (b, m) in scene.sample.labels.iter().zip(&scene.masks) {
                b.validate().unwrap();
                let x0 = libm::round(b.corners().0 * 160.0) as i64;
                let x1 = libm::round(b.corners().2 * 160.0) as i64;
                let y0 = libm::round(b.corners().1 * 160.0) as i64;
                let y1 = libm::round(b.corners().3 * 160.0) as i64;
                let col = |x: i64| (y0..y1).any(|y| m.at(x, y) > 0.0);
                let row = |y: i64| (x0..x1).any(|x| m.at(x, y) > 0.0);
                assert!(col(x0) && col(x1 - 1) && row(y0) && row(y1 - 1));
            }
        }
    }

    #[test]
    fn overcrowded_spec_errors() {
        let spec = SceneSpec {
            image_size: 32,
            min_objects: 40,
            max_objects: 40,
            min_scale: 30.0,
            max_scale: 32.0,
            boundary_probability: 0.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&spec, 0), Err(Error::Generation(_))));
    }
}
